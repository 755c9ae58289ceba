"""Brute-force graph oracles used to check the fast CFG analyses.

Everything here is deliberately naive: dominance comes from enumerating every
simple path, reducibility from applying the T1/T2 rewrite rules until nothing
changes.  Both are exponential in the worst case and only meant for small
graphs.
"""

from __future__ import annotations

VIRTUAL_EXIT = "<exit>"


def simple_paths(succ: dict[str, list[str]], src: str, dst: str) -> list[list[str]]:
    """Every simple path from ``src`` to ``dst`` (inclusive of both ends)."""
    out: list[list[str]] = []

    def walk(node, path, seen):
        if node == dst:
            out.append(list(path))
            return
        for s in succ.get(node, ()):
            if s not in seen:
                seen.add(s)
                path.append(s)
                walk(s, path, seen)
                path.pop()
                seen.discard(s)

    walk(src, [src], {src})
    return out


def dominator_sets(succ: dict[str, list[str]], entry: str) -> dict[str, set[str]]:
    """``dom[b]`` is the set of nodes on every entry-to-``b`` path."""
    nodes = set(succ) | {s for ss in succ.values() for s in ss}
    dom: dict[str, set[str]] = {}
    for b in nodes:
        paths = simple_paths(succ, entry, b)
        if not paths:
            continue
        common = set(paths[0])
        for p in paths[1:]:
            common &= set(p)
        dom[b] = common
    return dom


def immediate(dom: dict[str, set[str]], root: str) -> dict[str, str]:
    """The closest strict dominator of each node; the root maps to itself."""
    out = {root: root}
    for b, ds in dom.items():
        if b == root:
            continue
        strict = ds - {b}
        # the immediate dominator is the strict dominator dominated by all others
        (best,) = [d for d in strict if strict <= dom[d]]
        out[b] = best
    return out


def reverse(succ: dict[str, list[str]]) -> dict[str, list[str]]:
    pred: dict[str, list[str]] = {n: [] for n in succ}
    for a, ss in succ.items():
        for s in ss:
            pred.setdefault(s, []).append(a)
    return pred


def with_virtual_exit(succ: dict[str, list[str]]) -> tuple[dict[str, list[str]], str]:
    exits = [n for n, ss in succ.items() if not ss]
    if len(exits) == 1:
        return dict(succ), exits[0]
    out = {n: list(ss) for n, ss in succ.items()}
    for e in exits:
        out[e] = [VIRTUAL_EXIT]
    out[VIRTUAL_EXIT] = []
    return out, VIRTUAL_EXIT


def brute_idom(succ: dict[str, list[str]], entry: str) -> dict[str, str]:
    return immediate(dominator_sets(succ, entry), entry)


def brute_ipdom(succ: dict[str, list[str]]) -> dict[str, str]:
    full, root = with_virtual_exit(succ)
    return immediate(dominator_sets(reverse(full), root), root)


def t1_t2_reducible(succ: dict[str, list[str]], entry: str) -> bool:
    """Apply T1 (drop self loops) and T2 (fold a node into its only
    predecessor) until neither applies; the graph is reducible exactly when a
    single node remains."""
    edges = {n: set(ss) for n, ss in succ.items()}
    for ss in list(edges.values()):
        for s in ss:
            edges.setdefault(s, set())
    changed = True
    while changed:
        changed = False
        for n, ss in edges.items():
            ss.discard(n)  # T1
        for n in list(edges):
            if n == entry:
                continue
            preds = [p for p, ss in edges.items() if n in ss]
            if len(preds) == 1:  # T2
                p = preds[0]
                edges[p].discard(n)
                edges[p] |= edges.pop(n)
                changed = True
                break
    return len(edges) == 1
