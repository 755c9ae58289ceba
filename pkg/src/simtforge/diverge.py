"""Divergence management insertion (split/join and loop predicates).

Before instrumenting, :func:`canonicalize_regions` reshapes the CFG so that
every divergent branch dominates the blocks between it and its immediate
post-dominator, and reconverges in a join block of its own.  With that shape a
single token per branch is enough and tokens nest like brackets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cfg import (
    LoopForest,
    PostDomTree,
    build_loop_forest,
    compute_dom_tree,
    compute_postdom_tree,
    reachable,
)
from .ir import Block, Function, Instr
from .normalize import PipelineConfig, entry_const
from .ssa import repair_ssa
from .uniformity import BranchState, UniformityMap, analyze_function


class MalformedLoop(Exception):
    pass


class UnreachableIpdom(Exception):
    pass


def region(f: Function, b: str, ip: str) -> set[str]:
    """Blocks reachable from ``b``'s successors without passing ``ip`` (``ip`` excluded)."""
    succ = f.successors()
    out: set[str] = set()
    work = [s for s in succ[b] if s != ip]
    while work:
        n = work.pop()
        if n in out or n == ip:
            continue
        out.add(n)
        work.extend(succ[n])
    return out


def latches(f: Function, lf: LoopForest) -> set[str]:
    return {l for lp in lf.loops for l in lp.latches}


def _route(f: Function, edges: list[tuple[str, str]], hub: str) -> list[tuple[str, str, str]]:
    """Send each edge to ``hub``; returns (source, old target, hub predecessor) triples.

    A source with two routed edges gets a trampoline block per edge so the hub's
    phis can tell the edges apart.
    """
    count: dict[str, int] = {}
    for u, _ in edges:
        count[u] = count.get(u, 0) + 1
    out = []
    for u, t in edges:
        if count[u] > 1:
            tl = f.fresh_label(f"{u}.to.{t}")
            f.insert_block_after(u, Block(tl, term=Instr("br", targets=[hub])))
            f.block(u).term.replace_target(t, tl)
            out.append((u, t, tl))
        else:
            f.block(u).term.replace_target(t, hub)
            out.append((u, t, u))
    return out


def _move_phis(f: Function, hub: Block, routed, target: str, undef: str) -> None:
    """Re-home ``target``'s phi arms for routed edges into phis of ``hub``."""
    srcs = {u for u, t, _ in routed if t == target}
    for phi in f.block(target).phis:
        arms = []
        for u, t, p in routed:
            v = phi.incoming_from(u) if t == target else None
            arms.append((v if v is not None else undef, p))
        merged = f.fresh_value(f"{phi.dest}.f")
        hub.phis.append(Instr("phi", merged, incoming=arms))
        phi.incoming = [(v, q) for v, q in phi.incoming if q not in srcs] + [(merged, hub.label)]


def flow_extract(f: Function, y: str, m: str) -> str:
    """Defer shared block ``y`` behind a guard block that re-decides entry to it.

    ``m`` is the exit of the region that ``y`` enters from the side.  Every edge
    into ``y``, and every edge into ``m`` from outside the ``y``-to-``m``
    region, is routed to a new block that branches on ``%want`` to ``y`` or
    straight to ``m``.
    """
    preds = f.predecessors()
    inner = reachable(f.successors(), y, avoid=m)
    edges = [(p, y) for p in preds[y]] + [(q, m) for q in preds[m] if q not in inner]
    hub = Block(f.fresh_label(f"{y}.flow"))
    one, zero = entry_const(f, 1), entry_const(f, 0)
    routed = _route(f, edges, hub.label)
    want = f.fresh_value("want")
    hub.phis.append(Instr("phi", want, incoming=[(one if t == y else zero, p) for _, t, p in routed]))
    _move_phis(f, hub, routed, y, zero)
    _move_phis(f, hub, routed, m, zero)
    hub.term = Instr("br", args=[want], targets=[y, m])
    f.blocks.insert([b.label for b in f.blocks].index(y), hub)
    repair_ssa(f)
    return hub.label


def private_join(f: Function, b: str, ip: str, reg: set[str]) -> str | None:
    """Give branch ``b`` its own reconvergence block in front of ``ip`` when ``ip`` is shared."""
    preds = f.predecessors()[ip]
    inside = [p for p in preds if p in reg or p == b]
    if len(inside) == len(preds):
        return None
    hub = Block(f.fresh_label(f"{b}.join"), term=Instr("br", targets=[ip]))
    routed = _route(f, [(p, ip) for p in inside], hub.label)
    srcs = {u for u, _, _ in routed}
    for phi in f.block(ip).phis:
        arms = [(phi.incoming_from(u), p) for u, _, p in routed]
        if len(arms) == 1:
            merged = arms[0][0]
        else:
            merged = f.fresh_value(f"{phi.dest}.j")
            hub.phis.append(Instr("phi", merged, incoming=arms))
        phi.incoming = [(v, q) for v, q in phi.incoming if q not in srcs] + [(merged, hub.label)]
    f.blocks.insert([x.label for x in f.blocks].index(ip), hub)
    return hub.label


def _divergent_branches(f: Function, u: UniformityMap, pd: PostDomTree, lf: LoopForest):
    skip = latches(f, lf)
    out = []
    for blk in f.blocks:
        if blk.label in skip or u.branches.get(blk.label) is not BranchState.DIVERGENT:
            continue
        ip = pd.ipdom.get(blk.label)
        if ip is None or ip == blk.label:
            continue
        out.append((blk.label, ip, region(f, blk.label, ip)))
    return out


def canonicalize_regions(f: Function, summaries=None, annotations: bool = True,
                         limit: int = 256) -> int:
    """Make divergent regions single-entry with private join blocks; returns edits made."""
    edits = 0
    for _ in range(limit):
        u = analyze_function(f, summaries, annotations)
        pd = compute_postdom_tree(f)
        lf = build_loop_forest(f, compute_dom_tree(f))
        preds = f.predecessors()
        fixed = False
        for b, ip, reg in sorted(_divergent_branches(f, u, pd, lf), key=lambda x: len(x[2])):
            bad = [y for y in sorted(reg) if any(p not in reg and p != b for p in preds[y])]
            if bad:
                y = min(bad, key=[x.label for x in f.blocks].index)
                flow_extract(f, y, ip)
                fixed = True
                break
        if fixed:
            edits += 1
            continue
        for b, ip, reg in sorted(_divergent_branches(f, u, pd, lf), key=lambda x: len(x[2])):
            if private_join(f, b, ip, reg) is not None:
                repair_ssa(f)
                fixed = True
                break
        if not fixed:
            return edits
        edits += 1
    raise MalformedLoop(f"@{f.name}: region canonicalization did not converge")


# ---------------------------------------------------------------------------
# Algorithm 2


@dataclass
class DivergencePlan:
    d_branch: list[tuple[str, str]] = field(default_factory=list)
    d_loop: list[tuple[str, str]] = field(default_factory=list)


def classify_branches(f: Function, u: UniformityMap, pd: PostDomTree, lf: LoopForest) -> DivergencePlan:
    plan = DivergencePlan()
    succ = f.successors()
    for blk in f.blocks:
        b = blk.label
        if not blk.term.is_cond_branch or u.branches.get(b) is not BranchState.DIVERGENT:
            continue
        ip = pd.ipdom[b]
        loop = next((lp for lp in lf.loops if b in lp.latches and lp.header in succ[b]), None)
        if loop is not None:
            if ip in loop.body:
                plan.d_branch.append((b, ip))
            else:
                plan.d_loop.append((b, ip))
        elif ip in reachable(succ, b) and ip != b:
            plan.d_branch.append((b, ip))
    return plan


def transform_loop(f: Function, plan: DivergencePlan, lf: LoopForest) -> None:
    by_latch = {lp.latch: lp for lp in lf.loops}
    for latch, _ in plan.d_loop:
        lp = by_latch.get(latch)
        blk = f.block(latch)
        if lp is None or lp.preheader is None or not blk.term.is_cond_branch \
                or blk.term.targets[0] != lp.header:
            raise MalformedLoop(f"@{f.name}: latch ^{latch} is not a two-way branch to its header")
        exit_label = blk.term.targets[1]
        m0 = f.fresh_value(f"{lp.header}.mask")
        f.block(lp.preheader).body.append(Instr("activemask", m0))
        blk.term = Instr("pred", args=[blk.term.args[0], m0], targets=[lp.header, exit_label])
        f.block(exit_label).body.insert(0, Instr("tmc", args=[m0]))


def transform_branch(f: Function, plan: DivergencePlan) -> None:
    succ = f.successors()
    joins: dict[str, list[str]] = {}
    for b, ip in plan.d_branch:
        if ip not in reachable(succ, b):
            raise UnreachableIpdom(f"@{f.name}: ^{ip} not reachable from ^{b}")
        blk = f.block(b)
        tok = f.fresh_value(f"{b}.tok")
        blk.body.append(Instr("split", tok, args=[blk.term.args[0]]))
        joins.setdefault(ip, []).append((len(region(f, b, ip)), tok))
    for ip, toks in joins.items():
        # innermost (smallest region) joins first
        ordered = [Instr("join", args=[t]) for _, t in sorted(toks)]
        f.block(ip).body[0:0] = ordered


# ---------------------------------------------------------------------------
# phi demotion


def demote_phis(f: Function, cfg: PipelineConfig | None = None,
                u: UniformityMap | None = None) -> dict[str, str]:
    """Replace phis with copies; returns a map from each new copy name to its phi.

    Every phi ``%d`` becomes ``%d.in = mov v`` at the end of each predecessor
    (ahead of a trailing split) and ``%d = mov %d.in`` at the top of its block,
    after any join or tmc.  Reading through ``%d.in`` keeps the copies for one
    edge parallel: nothing a copy writes is read by another copy on that edge.
    """
    cfg = cfg or PipelineConfig()
    made: dict[str, str] = {}
    for blk in f.blocks:
        if not blk.phis:
            continue
        heads = []
        for phi in blk.phis:
            tmp = f.fresh_value(f"{phi.dest}.in")
            made[tmp] = phi.dest
            for v, p in phi.incoming:
                pb = f.block(p)
                at = len(pb.body)
                if at and pb.body[-1].op == "split":
                    at -= 1
                pb.body.insert(at, Instr("mov", tmp, args=[v]))
            heads.append(Instr("mov", phi.dest, args=[tmp]))
        blk.phis = []
        k = 0
        while k < len(blk.body) and blk.body[k].op in ("join", "tmc"):
            k += 1
        blk.body[k:k] = heads
    if cfg.zicond:
        for blk in f.blocks:
            for ins in blk.body:
                if ins.op == "select":
                    ins.op = "cmov"
    return made


# ---------------------------------------------------------------------------
# static checks on Lowered code


def check_nesting(f: Function, divergent: set[str] | None = None) -> list[str]:
    """Symbolic token-stack walk over forward edges; returns problem descriptions.

    With ``divergent`` (names of divergent values) it also reports conditional
    branches on a divergent value that no split guards.
    """
    problems: list[str] = []
    dom = compute_dom_tree(f)
    succ = f.successors()
    blocks = f.block_map()
    seen: dict[str, tuple[str, ...]] = {}
    work = [(f.entry.label, ())]
    while work:
        label, stack = work.pop()
        if label in seen:
            if seen[label] != stack:
                problems.append(f"^{label}: reached with tokens {list(seen[label])} and {list(stack)}")
            continue
        seen[label] = stack
        blk = blocks[label]
        st = list(stack)
        for ins in blk.body:
            if ins.op == "split":
                st.append(ins.dest)
            elif ins.op == "join":
                if not st or st[-1] != ins.args[0]:
                    problems.append(f"^{label}: join %{ins.args[0]} does not match top {st[-1:] or 'empty'}")
                else:
                    st.pop()
        if blk.term.op == "ret" and st:
            problems.append(f"^{label}: returns with open tokens {st}")
        if divergent is not None and blk.term.is_cond_branch and blk.term.args[0] in divergent:
            if not blk.body or blk.body[-1].op != "split":
                problems.append(f"^{label}: divergent branch on %{blk.term.args[0]} without split")
        for s in succ[label]:
            if dom.dominates(s, label):
                if s in seen and seen[s] != tuple(st):
                    problems.append(f"^{label}: back edge to ^{s} with tokens {st}")
                continue
            work.append((s, tuple(st)))
    return problems
