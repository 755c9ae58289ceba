"""CFG reconstruction: duplicate shared divergent CDG leaves.

A block that is control dependent on several branches, at least one of them
divergent, forces the divergence machinery to reason about a merged
predicate.  Giving each incoming CFG edge its own copy of the block leaves
every copy under a single condition.
"""

from __future__ import annotations

from .cfg import build_cdg, build_loop_forest, compute_dom_tree, compute_postdom_tree
from .ir import Function
from .normalize import clone_for_preds
from .ssa import repair_ssa
from .uniformity import BranchState, FunctionSummary, analyze_function


def qualifying_blocks(f: Function, u, cdg, lf) -> list[str]:
    succ = f.successors()
    preds = f.predecessors()
    headers = lf.headers()
    avoid = headers | lf.preheaders() | set(f.exit_blocks())
    out = []
    for b in f.blocks:
        n = b.label
        if n in avoid or n == f.entry.label or len(preds[n]) < 2:
            continue
        if any(s in headers for s in succ[n]):
            continue  # latch: copies would add back edges
        if cdg.pred_count(n) < 2 or not cdg.is_leaf(n):
            continue
        if not any(u.branches.get(a) is BranchState.DIVERGENT for a in cdg.reverse[n]):
            continue
        out.append(n)
    return out


def reconstruct_cfg(f: Function, summaries: dict[str, FunctionSummary] | None = None,
                    annotations: bool = True) -> int:
    """Duplicate qualifying blocks; returns the number of copies made."""
    made = 0
    limit = 4 * len(f.blocks)
    while made < limit:
        u = analyze_function(f, summaries, annotations)
        pd = compute_postdom_tree(f)
        cdg = build_cdg(f, pd)
        lf = build_loop_forest(f, compute_dom_tree(f))
        todo = qualifying_blocks(f, u, cdg, lf)
        if not todo:
            break
        made += _duplicate(f, todo[0])
        repair_ssa(f)
    return made


def _duplicate(f: Function, label: str) -> int:
    return clone_for_preds(f, label, f.predecessors()[label][1:], suffix="r")
