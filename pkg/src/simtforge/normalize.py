"""Code and CFG simplification ahead of divergence instrumentation.

The passes here bring a High-stage function into the shape the divergence
passes expect: one exit block, no unreachable code, selects either kept for
``cmov`` or expanded into diamonds, canonical loops and a reducible CFG.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

from .cfg import (
    LoopForest,
    build_loop_forest,
    check_reducible,
    compute_dom_tree,
    invert,
    is_canonical_loop,
    reachable,
    reverse_postorder,
)
from .ir import Block, Function, Instr, definitions
from .ssa import repair_ssa


@dataclass
class PipelineConfig:
    zicond: bool = False
    recon: bool = True
    annotations: bool = True
    repair: bool = True
    warp_size: int = 32
    warp_count: int = 16
    mem_words: int = 4096

    def __post_init__(self):
        if not 1 <= self.warp_size <= 64:
            raise ValueError(f"warp size must be in [1, 64], got {self.warp_size}")
        if self.warp_count < 1 or self.mem_words < 1:
            raise ValueError("warp count and memory size must be positive")


class StructurizeError(Exception):
    pass


def entry_const(f: Function, value: int, base: str | None = None) -> str:
    """Materialize ``const value`` at the top of the entry block and return its name."""
    name = f.fresh_value(base or f"k{value}")
    f.entry.body.insert(0, Instr("const", name, imm=[value]))
    return name


# ---------------------------------------------------------------------------
# simplify_cfg


def remove_unreachable(f: Function) -> bool:
    live = reachable(f.successors(), f.entry.label)
    dead = {b.label for b in f.blocks if b.label not in live}
    if not dead:
        return False
    f.blocks = [b for b in f.blocks if b.label in live]
    for b in f.blocks:
        for phi in b.phis:
            phi.incoming = [(v, p) for v, p in phi.incoming if p not in dead]
    return True


def merge_returns(f: Function) -> bool:
    rets = [b for b in f.blocks if b.term.op == "ret"]
    if len(rets) < 2:
        return False
    exit_label = f.fresh_label("exit")
    exit_block = Block(exit_label)
    if rets[0].term.args:
        dest = f.fresh_value("retval")
        exit_block.phis.append(Instr("phi", dest, incoming=[(b.term.args[0], b.label) for b in rets]))
        exit_block.term = Instr("ret", args=[dest])
    for b in rets:
        b.term = Instr("br", targets=[exit_label])
    f.blocks.append(exit_block)
    return True


def _substitute(f: Function, mapping: dict[str, str]) -> None:
    # resolve chains so a -> b -> c maps a straight to c
    def final(v):
        seen = set()
        while v in mapping and v not in seen:
            seen.add(v)
            v = mapping[v]
        return v

    flat = {k: final(k) for k in mapping}
    for _, ins in f.instructions():
        ins.replace_uses(flat)


def merge_blocks(f: Function) -> bool:
    """Fold ``b`` into ``a`` when ``a -> b`` is the only edge out of ``a`` and into ``b``."""
    changed = False
    while True:
        preds = f.predecessors()
        merged = False
        for a in f.blocks:
            if a.term.op != "br" or len(a.term.targets) != 1:
                continue
            t = a.term.targets[0]
            if t == a.label or t == f.entry.label or preds[t] != [a.label]:
                continue
            b = f.block(t)
            mapping = {phi.dest: phi.incoming[0][0] for phi in b.phis}
            a.body.extend(b.body)
            a.term = b.term
            f.blocks.remove(b)
            for s in b.successors():
                f.retarget_phis(s, b.label, a.label)
            if mapping:
                _substitute(f, mapping)
            merged = changed = True
            break
        if not merged:
            return changed


def simplify_cfg(f: Function) -> Function:
    remove_unreachable(f)
    merge_returns(f)
    merge_blocks(f)
    return f


# ---------------------------------------------------------------------------
# normalize_selects


def normalize_selects(f: Function, u=None, cfg: PipelineConfig | None = None) -> Function:
    """Fold constant selects; expand the rest into diamonds unless zicond keeps them."""
    cfg = cfg or PipelineConfig()
    defs = definitions(f)
    folded: dict[str, str] = {}
    for b in f.blocks:
        keep = []
        for ins in b.body:
            if ins.op == "select":
                c = defs.get(ins.args[0])
                if c is not None and c.op == "const":
                    folded[ins.dest] = ins.args[1] if c.imm[0] & 0xFFFFFFFF else ins.args[2]
                    continue
            keep.append(ins)
        b.body = keep
    if folded:
        _substitute(f, folded)
    if cfg.zicond:
        return f
    while True:
        site = next(((b, i) for b in f.blocks for i, ins in enumerate(b.body) if ins.op == "select"), None)
        if site is None:
            return f
        _expand_select(f, *site)


def _expand_select(f: Function, b: Block, i: int) -> None:
    sel = b.body[i]
    then_l = f.fresh_label(f"{b.label}.then")
    f.insert_block_after(b.label, Block(then_l))
    else_l = f.fresh_label(f"{b.label}.else")
    f.insert_block_after(then_l, Block(else_l))
    join_l = f.fresh_label(f"{b.label}.join")
    rest, term = b.body[i + 1:], b.term
    join = Block(join_l, body=rest, term=term)
    join.phis.append(Instr("phi", sel.dest, incoming=[(sel.args[1], then_l), (sel.args[2], else_l)]))
    f.insert_block_after(else_l, join)
    f.block(then_l).term = Instr("br", targets=[join_l])
    f.block(else_l).term = Instr("br", targets=[join_l])
    b.body = b.body[:i]
    b.term = Instr("br", args=[sel.args[0]], targets=[then_l, else_l])
    for s in join.successors():
        f.retarget_phis(s, b.label, join_l)


# ---------------------------------------------------------------------------
# canonicalize_loops


def _add_preheader(f: Function, header: str, outside: list[str]) -> str:
    label = f.fresh_label(f"{header}.pre")
    pre = Block(label, term=Instr("br", targets=[header]))
    for phi in f.block(header).phis:
        arms = [(v, p) for v, p in phi.incoming if p in outside]
        rest = [(v, p) for v, p in phi.incoming if p not in outside]
        if len(arms) == 1:
            merged = arms[0][0]
        else:
            merged = f.fresh_value(f"{phi.dest}.pre")
            pre.phis.append(Instr("phi", merged, incoming=arms))
        phi.incoming = rest + [(merged, label)]
    for p in outside:
        f.block(p).term.replace_target(header, label)
    idx = [b.label for b in f.blocks].index(header)
    # a loop headed by the entry block gets a fresh entry as its preheader
    f.blocks.insert(idx, pre)
    return label


def _rebuild_latch(f: Function, header: str, body: set[str], consts: dict[int, str]) -> None:
    """Route every back edge and every exit edge of the loop through one new latch.

    The latch carries ``%live`` (1 on continue edges, 0 on exit edges) and,
    when the loop left to several places, an exit index dispatched after the
    dedicated exit block.
    """
    succ = f.successors()
    edges = [(u, t) for u in sorted(body) for t in succ[u] if t == header or t not in body]
    exit_targets: list[str] = []
    for _, t in edges:
        if t != header and t not in exit_targets:
            exit_targets.append(t)

    def const(v):
        if v not in consts:
            consts[v] = entry_const(f, v)
        return consts[v]

    latch_l = f.fresh_label(f"{header}.latch")
    exit_l = f.fresh_label(f"{header}.exit")
    count: dict[str, int] = {}
    for u, _ in edges:
        count[u] = count.get(u, 0) + 1

    # each edge gets a distinct predecessor of the new latch
    routed: list[tuple[str, str, str]] = []  # (orig source, target, latch predecessor)
    new_blocks: list[Block] = []
    for u, t in edges:
        if count[u] > 1:
            tl = f.fresh_label(f"{u}.to.{t}")
            f.blocks.append(Block(tl, term=Instr("br", targets=[latch_l])))
            new_blocks.append(f.blocks[-1])
            f.block(u).term.replace_target(t, tl)
            routed.append((u, t, tl))
        else:
            f.block(u).term.replace_target(t, latch_l)
            routed.append((u, t, u))

    latch = Block(latch_l)
    undef = const(0)
    latch.phis.append(Instr("phi", f.fresh_value("live"),
                            incoming=[(const(1 if t == header else 0), p) for _, t, p in routed]))
    live = latch.phis[0].dest
    if len(exit_targets) > 1:
        latch.phis.append(Instr("phi", f.fresh_value("exit.idx"),
                                incoming=[(const(exit_targets.index(t) if t != header else 0), p)
                                          for _, t, p in routed]))
    srcs = {u for u, _, _ in routed}

    # header phis: back-edge arms now arrive through the latch
    for phi in f.block(header).phis:
        arms = []
        for u, t, p in routed:
            v = phi.incoming_from(u) if t == header else None
            arms.append((v if v is not None else undef, p))
        merged = f.fresh_value(f"{phi.dest}.l")
        latch.phis.append(Instr("phi", merged, incoming=arms))
        phi.incoming = [(v, q) for v, q in phi.incoming if q not in srcs] + [(merged, latch_l)]

    # dispatch chain after the dedicated exit
    dispatch: dict[str, str] = {}
    chain: list[Block] = []
    cur = Block(exit_l)
    chain.append(cur)
    for k, t in enumerate(exit_targets):
        if k == len(exit_targets) - 1:
            cur.term = Instr("br", targets=[t])
            dispatch[t] = cur.label
            break
        c = f.fresh_value(f"exit.is{k}")
        cur.body.append(Instr("icmp", c, args=[latch.phis[1].dest, const(k)], cond="eq"))
        nxt = Block(f.fresh_label(f"{exit_l}.{k + 1}"))
        cur.term = Instr("br", args=[c], targets=[t, nxt.label])
        dispatch[t] = cur.label
        chain.append(nxt)
        cur = nxt

    for t in exit_targets:
        for phi in f.block(t).phis:
            arms = []
            for u, tt, p in routed:
                v = phi.incoming_from(u) if tt == t else None
                arms.append((v if v is not None else undef, p))
            merged = f.fresh_value(f"{phi.dest}.x")
            latch.phis.append(Instr("phi", merged, incoming=arms))
            phi.incoming = [(v, q) for v, q in phi.incoming if q not in srcs] + [(merged, dispatch[t])]

    latch.term = Instr("br", args=[live], targets=[header, exit_l])
    last_body = max((i for i, b in enumerate(f.blocks) if b.label in body), default=len(f.blocks) - 1)
    for off, blk in enumerate([latch] + chain):
        f.blocks.insert(last_body + 1 + off, blk)


def _loop_needs_work(f: Function, lp) -> bool:
    if not is_canonical_loop(f, lp):
        return True
    return f.block(lp.latch).term.targets[0] != lp.header


def canonicalize_loops(f: Function, lf: LoopForest | None = None) -> Function:
    consts: dict[int, str] = {}
    changed = False
    for _ in range(10_000):
        forest = build_loop_forest(f, compute_dom_tree(f))
        todo = [lp for lp in sorted(forest.loops, key=lambda lp: len(lp.body)) if _loop_needs_work(f, lp)]
        if not todo:
            break
        lp = todo[0]
        if not lp.exits:
            raise StructurizeError(f"@{f.name}: loop at ^{lp.header} never exits")
        changed = True
        pred = invert(f.successors())
        outside = [p for p in pred[lp.header] if p not in lp.body]
        if lp.preheader is None:
            _add_preheader(f, lp.header, outside)
            continue
        _rebuild_latch(f, lp.header, lp.body, consts)
    if changed:
        repair_ssa(f)
    return f


# ---------------------------------------------------------------------------
# structurize


CLONE_BUDGET = 64


def strongly_connected(succ: dict[str, list[str]], nodes: set[str]) -> list[set[str]]:
    """Kosaraju SCCs of the subgraph induced by ``nodes`` (iterative)."""
    order: list[str] = []
    seen: set[str] = set()
    for start in sorted(nodes):
        if start in seen:
            continue
        seen.add(start)
        stack = [(start, iter(succ.get(start, ())))]
        while stack:
            n, it = stack[-1]
            for s in it:
                if s in nodes and s not in seen:
                    seen.add(s)
                    stack.append((s, iter(succ.get(s, ()))))
                    break
            else:
                stack.pop()
                order.append(n)
    pred = invert({n: [s for s in succ.get(n, ()) if s in nodes] for n in nodes})
    comps: list[set[str]] = []
    assigned: set[str] = set()
    for n in reversed(order):
        if n in assigned:
            continue
        comp, work = set(), [n]
        assigned.add(n)
        while work:
            x = work.pop()
            comp.add(x)
            for p in pred.get(x, ()):
                if p in nodes and p not in assigned:
                    assigned.add(p)
                    work.append(p)
        comps.append(comp)
    return comps


def find_multi_entry_region(f: Function) -> tuple[set[str], list[str]] | None:
    """Return a cycle region with several entry blocks, searching nested regions too."""
    succ = f.successors()
    pred = invert(succ)
    entry = f.entry.label
    work = [set(succ)]
    while work:
        nodes = work.pop()
        for comp in strongly_connected(succ, nodes):
            cyclic = len(comp) > 1 or any(n in succ[n] for n in comp)
            if not cyclic:
                continue
            entries = sorted(n for n in comp if n == entry or any(p not in comp for p in pred[n]))
            if len(entries) > 1:
                return comp, entries
            if entries:
                work.append(comp - {entries[0]})
    return None


def clone_for_preds(f: Function, label: str, preds: list[str], suffix: str = "c") -> int:
    """Give each predecessor in ``preds`` its own copy of ``label``."""
    orig = f.block(label)
    made = 0
    for p in preds:
        nb = copy.deepcopy(orig)
        nb.label = f.fresh_label(f"{label}.{suffix}")
        for phi in nb.phis:
            phi.incoming = [(v, q) for v, q in phi.incoming if q == p]
        for phi in orig.phis:
            phi.incoming = [(v, q) for v, q in phi.incoming if q != p]
        f.block(p).term.replace_target(label, nb.label)
        for s in nb.successors():
            for phi in f.block(s).phis:
                v = phi.incoming_from(label)
                if v is not None:
                    phi.incoming.append((v, nb.label))
        f.insert_block_after(label, nb)
        made += 1
    return made


def structurize(f: Function, budget: int = CLONE_BUDGET) -> Function:
    """Node splitting until the CFG is reducible.

    :func:`structurize_count` does the same work and reports how many blocks it cloned.
    """
    structurize_count(f, budget)
    return f


def structurize_count(f: Function, budget: int = CLONE_BUDGET) -> int:
    clones = 0
    while not check_reducible(f):
        region = find_multi_entry_region(f)
        if region is None:
            raise StructurizeError(f"@{f.name}: irreducible but no multi-entry region found")
        comp, entries = region
        rpo = reverse_postorder(f.successors(), f.entry.label)
        pick = min(entries, key=rpo.index)
        if pick == f.entry.label:
            pick = min((e for e in entries if e != pick), key=rpo.index)
        outside = [p for p in f.predecessors()[pick] if p not in comp]
        if clones + len(outside) > budget:
            raise StructurizeError(f"@{f.name}: clone budget of {budget} blocks exhausted")
        clones += clone_for_preds(f, pick, outside)
        repair_ssa(f)
    if clones:
        canonicalize_loops(f)
    return clones
