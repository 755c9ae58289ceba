"""Uniform/divergent classification of SSA values.

Values live on the two-point lattice ``Uniform < Divergent``.  Seeds come from
the divergence tracker rules (:func:`seed_uniformity`); propagation applies the
data rule along def-use chains and the sync rule at joins of divergent
branches.  :func:`analyze_function_arguments` runs the interprocedural
argument/return fixed point over the call graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .cfg import (
    ControlDependenceGraph,
    DomTree,
    PostDomTree,
    build_cdg,
    compute_postdom_tree_virtual,
)
from .ir import CSR_OPS, VOTE_OPS, Function, Module


class State(str, Enum):
    UNIFORM = "U"
    DIVERGENT = "D"


class BranchState(str, Enum):
    UNIFORM = "UniformBranch"
    DIVERGENT = "DivergentBranch"
    NONE = "NonConditional"


U, D = State.UNIFORM, State.DIVERGENT


@dataclass
class UniformityMap:
    values: dict[str, State]
    branches: dict[str, BranchState] = field(default_factory=dict)
    seeds: dict[str, State] = field(default_factory=dict)
    forced: frozenset[str] = frozenset()

    def __getitem__(self, v: str) -> State:
        return self.values[v]

    def is_uniform(self, v: str) -> bool:
        return self.values.get(v, D) is U

    def uniform_values(self) -> set[str]:
        return {v for v, s in self.values.items() if s is U}

    def divergent_branches(self) -> list[str]:
        return [b for b, s in self.branches.items() if s is BranchState.DIVERGENT]


@dataclass
class FunctionSummary:
    uarg: list[State]
    uptrout: list[State]
    uret: State = D

    @classmethod
    def divergent(cls, f: Function) -> FunctionSummary:
        return cls([D] * len(f.params), [D] * len(f.params), D)


# ---------------------------------------------------------------------------
# post-dominators that tolerate several returns (virtual exit)

VIRTUAL_EXIT = "<exit>"


def _postdom(f: Function) -> PostDomTree:
    return compute_postdom_tree_virtual(f, VIRTUAL_EXIT)


def branch_condition(f: Function, label: str) -> str | None:
    term = f.block(label).term
    if term.op == "br" and term.args:
        return term.args[0]
    if term.op == "pred":
        return term.args[0]
    return None


def sync_region(f: Function, label: str, ip: str) -> set[str]:
    """Blocks on a path from ``label`` to ``ip`` inclusive (``label`` excluded unless re-entered)."""
    succ = f.successors()
    seen: set[str] = set()
    work = list(succ[label])
    while work:
        n = work.pop()
        if n in seen:
            continue
        seen.add(n)
        if n == ip:
            continue
        work.extend(succ.get(n, ()))
    return seen


# ---------------------------------------------------------------------------
# seeds and propagation


def seed_uniformity(f: Function, summaries: dict[str, FunctionSummary] | None = None,
                    annotations: bool = True) -> UniformityMap:
    """Seeds of the divergence tracker.  ``annotations=False`` ignores ``uniform`` param flags."""
    summaries = summaries or {}
    own = summaries.get(f.name)
    seeds: dict[str, State] = {}
    for i, p in enumerate(f.params):
        if (p.uniform and annotations) or (own is not None and f.internal and not f.kernel and own.uarg[i] is U):
            seeds[p.name] = U
        else:
            seeds[p.name] = D
    for _, ins in f.instructions():
        if ins.dest is None:
            continue
        op = ins.op
        if op in ("tid", "atomic_add", "shfl", "load"):
            seeds[ins.dest] = D
        elif op == "const" or op in VOTE_OPS or (op in CSR_OPS and op != "tid"):
            seeds[ins.dest] = U
        elif op == "call":
            s = summaries.get(ins.callee)
            seeds[ins.dest] = U if s is not None and s.uret is U else D
    return UniformityMap(dict(seeds), seeds=seeds)


_DATA_EXEMPT = ("const", "tid", "ntid", "wid", "nwid", "coreid", "vote.all", "vote.any",
                "vote.ballot", "activemask")


def propagate_uniformity(f: Function, seeds: UniformityMap, pd: PostDomTree | None = None,
                         d: DomTree | None = None, forced: frozenset[str] = frozenset()) -> UniformityMap:
    pd = pd or _postdom(f)
    state: dict[str, State] = {}
    for v in f.defined_values():
        state[v] = U
    for v, s in seeds.seeds.items():
        state[v] = s
    for v in forced:
        state[v] = U

    preds = f.predecessors()
    regions: dict[str, set[str]] = {}
    changed = True
    while changed:
        changed = False
        for b in f.blocks:
            for ins in b.instrs():
                v = ins.dest
                if v is None or state[v] is D or v in forced:
                    continue
                if ins.op in _DATA_EXEMPT:
                    continue
                if ins.op in ("tid", "atomic_add", "shfl", "load"):
                    continue
                if any(state.get(a, D) is D for a in ins.uses()):
                    state[v] = D
                    changed = True
        for b in f.blocks:
            c = branch_condition(f, b.label)
            if c is None or state.get(c, D) is U or len(b.successors()) < 2:
                continue
            if b.label not in regions:
                ip = pd.ipdom.get(b.label, VIRTUAL_EXIT)
                regions[b.label] = sync_region(f, b.label, ip)
            for n in regions[b.label]:
                if n == VIRTUAL_EXIT or len(preds.get(n, ())) < 2:
                    continue
                for phi in f.block(n).phis:
                    if phi.dest not in forced and state[phi.dest] is U:
                        state[phi.dest] = D
                        changed = True

    branches: dict[str, BranchState] = {}
    for b in f.blocks:
        c = branch_condition(f, b.label)
        if c is None or len(b.successors()) < 2:
            branches[b.label] = BranchState.NONE
        else:
            branches[b.label] = BranchState.UNIFORM if state.get(c, D) is U else BranchState.DIVERGENT
    return UniformityMap(state, branches, dict(seeds.seeds), frozenset(forced))


def apply_annotations(f: Function, u: UniformityMap, pd: PostDomTree | None = None,
                      d: DomTree | None = None) -> UniformityMap:
    forced = {ins.args[0] for _, ins in f.instructions() if ins.op == "assume_uniform"}
    if not forced - u.forced:
        return u
    return propagate_uniformity(f, UniformityMap({}, seeds=u.seeds), pd, d,
                                frozenset(forced | u.forced))


def analyze_function(f: Function, summaries: dict[str, FunctionSummary] | None = None,
                     annotations: bool = True) -> UniformityMap:
    pd = _postdom(f)
    u = propagate_uniformity(f, seed_uniformity(f, summaries, annotations), pd)
    if annotations:
        u = apply_annotations(f, u, pd)
    return u


# ---------------------------------------------------------------------------
# interprocedural argument analysis


def call_graph(m: Module) -> dict[str, list[str]]:
    return {
        f.name: sorted({ins.callee for _, ins in f.instructions() if ins.op == "call"})
        for f in m.functions
    }


def scc_order(cg: dict[str, list[str]], roots: list[str]) -> list[list[str]]:
    """Tarjan SCCs, returned in reverse post-order of the condensation (callers first)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = [0]

    def strong(v):
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on.add(v)
        for w in cg.get(v, ()):
            if w not in index:
                strong(w)
                low[v] = min(low[v], low[w])
            elif w in on:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on.discard(w)
                comp.append(w)
                if w == v:
                    break
            sccs.append(sorted(comp))

    for r in roots + sorted(cg):
        if r not in index:
            strong(r)
    # Tarjan emits SCCs in reverse topological order (callees first)
    return sccs[::-1]


@dataclass
class ArgumentAnalysis:
    summaries: dict[str, FunctionSummary]
    iterations: int
    order: list[str]
    maps: dict[str, UniformityMap]


def _uniform_control(f: Function, u: UniformityMap, cdg: ControlDependenceGraph, label: str) -> bool:
    seen, work = set(), [label]
    while work:
        n = work.pop()
        for a in cdg.reverse.get(n, ()):
            if a in seen:
                continue
            seen.add(a)
            if u.branches.get(a) is BranchState.DIVERGENT:
                return False
            work.append(a)
    return True


def _cdg_any(f: Function) -> ControlDependenceGraph:
    pd = _postdom(f)
    cdg = build_cdg(f, pd)
    return cdg


def function_argument_fixpoint(m: Module, annotations: bool = True) -> ArgumentAnalysis:
    cg = call_graph(m)
    roots = [f.name for f in m.functions if f.kernel]
    order = [n for comp in scc_order(cg, roots) for n in comp]
    funcs = {f.name: f for f in m.functions}
    summaries = {n: FunctionSummary.divergent(funcs[n]) for n in order}
    cdgs = {n: _cdg_any(funcs[n]) for n in order}
    maps: dict[str, UniformityMap] = {}
    iterations = 0
    while True:
        iterations += 1
        changed = False
        for name in order:
            f = funcs[name]
            s = summaries[name]
            # AnalyzeArgument: call sites in every caller under current summaries
            if f.internal and not f.kernel:
                for i in range(len(f.params)):
                    if s.uarg[i] is U:
                        continue
                    if _argument_uniform(name, i, funcs, maps, cdgs, summaries, annotations):
                        s.uarg[i] = U
                        changed = True
            u = analyze_function(f, summaries, annotations)
            maps[name] = u
            if s.uret is D and _ret_uniform(f, u):
                s.uret = U
                changed = True
            for i, p in enumerate(f.params):
                if p.type == "addr" and s.uptrout[i] is D and _ptr_out_uniform(f, u, cdgs[name], p.name):
                    s.uptrout[i] = U
                    changed = True
        if not changed:
            break
    for i, f in enumerate(m.functions):
        maps[f.name] = analyze_function(f, summaries, annotations)
    return ArgumentAnalysis(summaries, iterations, order, maps)


def analyze_function_arguments(m: Module) -> dict[str, FunctionSummary]:
    return function_argument_fixpoint(m).summaries


def _argument_uniform(callee, i, funcs, maps, cdgs, summaries, annotations) -> bool:
    sites = 0
    for caller in funcs.values():
        for b, ins in caller.instructions():
            if ins.op != "call" or ins.callee != callee:
                continue
            sites += 1
            u = maps.get(caller.name)
            if u is None:
                u = maps[caller.name] = analyze_function(caller, summaries, annotations)
            if not u.is_uniform(ins.args[i]):
                return False
            if not _uniform_control(caller, u, cdgs[caller.name], b.label):
                return False
    return sites > 0


def _ret_uniform(f: Function, u: UniformityMap) -> bool:
    rets = [b for b in f.blocks if b.term.op == "ret"]
    if any(not b.term.args for b in rets):
        return False
    if len(rets) > 1 and u.divergent_branches():
        return False
    return all(u.is_uniform(b.term.args[0]) for b in rets)


def _ptr_out_uniform(f: Function, u: UniformityMap, cdg, param: str) -> bool:
    derived = {param}
    changed = True
    while changed:
        changed = False
        for _, ins in f.instructions():
            if ins.dest and ins.dest not in derived and ins.op in ("addr.add", "mov", "phi", "select"):
                if any(a in derived for a in ins.uses()):
                    derived.add(ins.dest)
                    changed = True
    for b, ins in f.instructions():
        if ins.op == "store" and ins.args[1] in derived:
            if not u.is_uniform(ins.args[0]) or not _uniform_control(f, u, cdg, b.label):
                return False
        if ins.op == "atomic_add" and ins.args[0] in derived:
            return False
        if ins.op == "call" and any(a in derived for a in ins.args):
            return False
    return True


def module_uniformity(m: Module, annotations: bool = True) -> ArgumentAnalysis:
    """Argument summaries plus the final per-function maps."""
    return function_argument_fixpoint(m, annotations)


def format_uniformity(m: Module, result: ArgumentAnalysis) -> str:
    lines = []
    for f in m.functions:
        u = result.maps[f.name]
        lines.append(f"@{f.name}:")
        for v in f.defined_values():
            lines.append(f"  %{v}: {u.values.get(v, D).value}")
        s = result.summaries[f.name]
        args = ",".join(x.value for x in s.uarg)
        ptr = ",".join(x.value for x in s.uptrout)
        lines.append(f"  summary: uarg=[{args}] uptrout=[{ptr}] uret={s.uret.value}")
    return "\n".join(lines) + "\n"
