"""Dominance, post-dominance, loops, reducibility and control dependence.

All analyses are pure functions of a :class:`~simtforge.ir.Function`; they
return immutable-by-convention snapshots that callers recompute after any CFG
mutation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ir import Function


class AnalysisError(Exception):
    pass


class MultipleExits(AnalysisError):
    pass


class UnreachableBlocks(AnalysisError):
    pass


# ---------------------------------------------------------------------------
# graph helpers on plain successor maps


def postorder(succ: dict[str, list[str]], entry: str, rng: random.Random | None = None) -> list[str]:
    """Iterative DFS postorder; ``rng`` shuffles successor visiting order."""
    seen = {entry}
    out: list[str] = []

    def kids(n):
        ks = list(succ.get(n, ()))
        if rng is not None:
            rng.shuffle(ks)
        return iter(ks)

    stack = [(entry, kids(entry))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, kids(s)))
                break
        else:
            stack.pop()
            out.append(node)
    return out


def reverse_postorder(succ, entry, rng=None) -> list[str]:
    return postorder(succ, entry, rng)[::-1]


def invert(succ: dict[str, list[str]]) -> dict[str, list[str]]:
    pred: dict[str, list[str]] = {n: [] for n in succ}
    for n, ss in succ.items():
        for s in ss:
            if n not in pred.setdefault(s, []):
                pred[s].append(n)
    return pred


def reachable(succ, start: str, avoid: str | None = None) -> set[str]:
    seen = {start}
    work = [start]
    while work:
        n = work.pop()
        for s in succ.get(n, ()):
            if s != avoid and s not in seen:
                seen.add(s)
                work.append(s)
    return seen


def idoms(succ: dict[str, list[str]], entry: str) -> tuple[dict[str, str], list[str]]:
    """Cooper/Harvey/Kennedy iterative dominators over the nodes reachable from ``entry``."""
    order = reverse_postorder(succ, entry)
    index = {n: i for i, n in enumerate(order)}
    pred = invert(succ)
    idom = {entry: entry}

    def intersect(a, b):
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for n in order[1:]:
            ps = [p for p in pred.get(n, ()) if p in idom]
            if not ps:
                continue
            new = ps[0]
            for p in ps[1:]:
                new = intersect(p, new)
            if idom.get(n) != new:
                idom[n] = new
                changed = True
    return idom, order


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class DomTree:
    idom: dict[str, str]
    order: list[str]
    root: str

    def dominates(self, a: str, b: str) -> bool:
        while True:
            if a == b:
                return True
            if b == self.root:
                return False
            b = self.idom[b]

    def strictly_dominates(self, a: str, b: str) -> bool:
        return a != b and self.dominates(a, b)

    def children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {n: [] for n in self.order}
        for n in self.order:
            if n != self.root:
                kids[self.idom[n]].append(n)
        return kids

    def depth(self, n: str) -> int:
        d = 0
        while n != self.root:
            n = self.idom[n]
            d += 1
        return d

    def preorder(self) -> list[str]:
        kids = self.children()
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(kids[n]))
        return out

    def nearest_common(self, nodes) -> str:
        nodes = list(nodes)
        cur = nodes[0]
        for n in nodes[1:]:
            while not self.dominates(cur, n):
                cur = self.idom[cur]
        return cur


@dataclass(frozen=True)
class PostDomTree:
    ipdom: dict[str, str]
    order: list[str]
    root: str

    def __getitem__(self, n: str) -> str:
        return self.ipdom[n]

    def postdominates(self, a: str, b: str) -> bool:
        while True:
            if a == b:
                return True
            if b == self.root:
                return False
            b = self.ipdom[b]


def _check_reachable(f: Function) -> dict[str, list[str]]:
    succ = f.successors()
    live = reachable(succ, f.entry.label)
    dead = [b.label for b in f.blocks if b.label not in live]
    if dead:
        raise UnreachableBlocks(f"@{f.name}: unreachable blocks {dead}")
    return succ


def compute_dom_tree(f: Function) -> DomTree:
    succ = _check_reachable(f)
    idom, order = idoms(succ, f.entry.label)
    return DomTree(idom, order, f.entry.label)


def compute_postdom_tree(f: Function) -> PostDomTree:
    succ = _check_reachable(f)
    exits = f.exit_blocks()
    if len(exits) != 1:
        raise MultipleExits(f"@{f.name}: {len(exits)} exit blocks")
    rsucc = invert(succ)
    ipdom, order = idoms(rsucc, exits[0])
    missing = [b.label for b in f.blocks if b.label not in ipdom]
    if missing:
        raise AnalysisError(f"@{f.name}: blocks cannot reach the exit: {missing}")
    return PostDomTree(ipdom, order, exits[0])


def compute_postdom_tree_virtual(f: Function, virtual: str = "<exit>") -> PostDomTree:
    """Post-dominators that tolerate several exits by joining them at a virtual node."""
    succ = f.successors()
    exits = f.exit_blocks()
    if len(exits) == 1:
        root = exits[0]
    else:
        succ = dict(succ)
        for e in exits:
            succ[e] = [virtual]
        succ[virtual] = []
        root = virtual
    ipdom, order = idoms(invert(succ), root)
    return PostDomTree(ipdom, order, root)


def dominance_frontiers(succ: dict[str, list[str]], dom: DomTree) -> dict[str, set[str]]:
    pred = invert(succ)
    df: dict[str, set[str]] = {n: set() for n in dom.order}
    for n in dom.order:
        ps = [p for p in pred.get(n, ()) if p in dom.idom]
        if len(ps) < 2:
            continue
        for p in ps:
            runner = p
            while runner != dom.idom[n]:
                df[runner].add(n)
                if runner == dom.root:
                    break
                runner = dom.idom[runner]
    return df


def is_reachable(f: Function, a: str, b: str) -> bool:
    return b in reachable(f.successors(), a)


# ---------------------------------------------------------------------------
# loops


@dataclass
class Loop:
    header: str
    latches: set[str]
    body: set[str]
    exits: set[str] = field(default_factory=set)  # blocks outside the body reached from it
    preheader: str | None = None
    parent: str | None = None  # header of the enclosing loop

    @property
    def latch(self) -> str | None:
        return next(iter(self.latches)) if len(self.latches) == 1 else None

    def exit_edges(self, succ) -> list[tuple[str, str]]:
        return [(u, x) for u in sorted(self.body) for x in succ[u] if x not in self.body]


@dataclass
class LoopForest:
    loops: list[Loop]

    def by_header(self) -> dict[str, Loop]:
        return {lp.header: lp for lp in self.loops}

    def innermost(self, block: str) -> Loop | None:
        best = None
        for lp in self.loops:
            if block in lp.body and (best is None or len(lp.body) < len(best.body)):
                best = lp
        return best

    def headers(self) -> set[str]:
        return {lp.header for lp in self.loops}

    def preheaders(self) -> set[str]:
        return {lp.preheader for lp in self.loops if lp.preheader is not None}

    def depth(self, block: str) -> int:
        return sum(1 for lp in self.loops if block in lp.body)


def build_loop_forest(f: Function, d: DomTree) -> LoopForest:
    succ = f.successors()
    pred = invert(succ)
    loops: dict[str, Loop] = {}
    for n in d.order:
        for h in succ[n]:
            if d.dominates(h, n):
                lp = loops.setdefault(h, Loop(h, set(), {h}))
                lp.latches.add(n)
                work = [n]
                while work:
                    x = work.pop()
                    if x not in lp.body:
                        lp.body.add(x)
                        work.extend(pred[x])
    for lp in loops.values():
        lp.exits = {x for u in lp.body for x in succ[u] if x not in lp.body}
        outside = [p for p in pred[lp.header] if p not in lp.body]
        if len(outside) == 1 and succ[outside[0]] == [lp.header]:
            lp.preheader = outside[0]
    ordered = sorted(loops.values(), key=lambda lp: (-len(lp.body), d.order.index(lp.header)))
    for i, lp in enumerate(ordered):
        for outer in reversed(ordered[:i]):
            if lp.header in outer.body and outer is not lp:
                lp.parent = outer.header
                break
    return LoopForest(ordered)


def is_canonical_loop(f: Function, lp: Loop) -> bool:
    """One preheader, one latch holding the only exit edge, dedicated exit block."""
    succ = f.successors()
    pred = invert(succ)
    if lp.preheader is None or len(lp.latches) != 1:
        return False
    latch = lp.latch
    edges = lp.exit_edges(succ)
    if len(edges) != 1 or edges[0][0] != latch:
        return False
    term = f.block(latch).term
    if term.op not in ("br", "pred") or len(term.targets) != 2:
        return False
    exit_block = edges[0][1]
    return pred[exit_block] == [latch] and lp.header in term.targets


# ---------------------------------------------------------------------------
# reducibility


@dataclass(frozen=True)
class Reducibility:
    reducible: bool
    witness: tuple[tuple[str, str], ...] = ()

    def __bool__(self) -> bool:
        return self.reducible


def retreating_edges(succ, entry, rng=None) -> list[tuple[str, str]]:
    """Edges u->v where v is an ancestor of u (on the DFS stack) in one DFS."""
    on_stack: set[str] = set()
    seen = {entry}
    out: list[tuple[str, str]] = []

    def kids(n):
        ks = list(succ.get(n, ()))
        if rng is not None:
            rng.shuffle(ks)
        return iter(ks)

    on_stack.add(entry)
    stack = [(entry, kids(entry))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s in on_stack:
                out.append((node, s))
            elif s not in seen:
                seen.add(s)
                on_stack.add(s)
                stack.append((s, kids(s)))
                break
        else:
            stack.pop()
            on_stack.discard(node)
    return out


def check_reducible(f: Function, d: DomTree | None = None, rng: random.Random | None = None) -> Reducibility:
    d = d or compute_dom_tree(f)
    bad = [
        (u, v)
        for u, v in retreating_edges(f.successors(), f.entry.label, rng)
        if not d.dominates(v, u)
    ]
    return Reducibility(not bad, tuple(sorted(bad)))


# ---------------------------------------------------------------------------
# control dependence


@dataclass(frozen=True)
class ControlDependenceGraph:
    edges: dict[str, set[str]]  # a -> blocks control-dependent on a
    reverse: dict[str, set[str]]  # b -> blocks b is control-dependent on

    def is_leaf(self, n: str) -> bool:
        return not self.edges.get(n)

    def pred_count(self, n: str) -> int:
        return len(self.reverse.get(n, ()))

    def depth(self) -> int:
        """Longest acyclic chain of control dependences."""
        memo: dict[str, int] = {}

        def walk(n, path):
            if n in memo:
                return memo[n]
            best = 0
            for m in self.edges.get(n, ()):
                if m not in path:
                    best = max(best, 1 + walk(m, path | {m}))
            memo[n] = best
            return best

        return max((walk(n, {n}) for n in self.edges), default=0)


def build_cdg(f: Function, pd: PostDomTree) -> ControlDependenceGraph:
    edges: dict[str, set[str]] = {b.label: set() for b in f.blocks}
    reverse: dict[str, set[str]] = {b.label: set() for b in f.blocks}
    for b in f.blocks:
        succs = b.successors()
        if len(succs) < 2:
            continue
        a = b.label
        stop = pd.ipdom[a] if a != pd.root else None
        for s in succs:
            runner = s
            while runner != stop:
                edges[a].add(runner)
                reverse[runner].add(a)
                if runner == pd.root:
                    break
                runner = pd.ipdom[runner]
    return ControlDependenceGraph(edges, reverse)
