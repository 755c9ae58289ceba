"""SSA maintenance shared by the CFG-rewriting passes.

Passes that clone blocks or reroute edges leave values with several
definitions, or uses that their definition no longer dominates.  They call
:func:`repair_ssa` afterwards, which renames every affected value and places
phis on the iterated dominance frontier.  Paths on which a value was never
defined read a ``const 0`` placeholder materialized in the entry block.
"""

from __future__ import annotations

import copy

from .cfg import compute_dom_tree, dominance_frontiers
from .ir import Block, Function, Instr


def split_edge(f: Function, a: str, b: str, base: str | None = None) -> str:
    """Insert an empty block on the edge ``a -> b``; return its label."""
    label = f.fresh_label(base or f"{a}.{b}")
    f.block(a).term.replace_target(b, label)
    f.retarget_phis(b, a, label)
    f.insert_block_after(a, Block(label, term=Instr("br", targets=[b])))
    return label


def redirect_edge(f: Function, a: str, old: str, new: str) -> None:
    """Point ``a``'s terminator at ``new`` instead of ``old`` and drop old phi arms."""
    f.block(a).term.replace_target(old, new)
    for phi in f.block(old).phis:
        phi.incoming = [(v, p) for v, p in phi.incoming if p != a]


def clone_block(f: Function, label: str, new_label: str) -> Block:
    """Copy a block keeping its result names; callers must run :func:`repair_ssa`."""
    nb = copy.deepcopy(f.block(label))
    nb.label = new_label
    return nb


def add_incoming_like(f: Function, succ: str, like: str, new_pred: str) -> None:
    """Give ``succ``'s phis an arm from ``new_pred`` copying the arm from ``like``."""
    for phi in f.block(succ).phis:
        v = phi.incoming_from(like)
        if v is not None:
            phi.incoming.append((v, new_pred))


def remove_unused_phis(f: Function, candidates: set[str] | None = None) -> None:
    while True:
        used = set()
        for _, ins in f.instructions():
            for u in ins.uses():
                if ins.dest != u:
                    used.add(u)
        removed = False
        for b in f.blocks:
            keep = []
            for phi in b.phis:
                if phi.dest not in used and (candidates is None or phi.dest in candidates):
                    removed = True
                else:
                    keep.append(phi)
            b.phis = keep
        if not removed:
            return


def values_needing_repair(f: Function) -> set[str]:
    dom = compute_dom_tree(f)
    sites: dict[str, list[tuple[str, int]]] = {p.name: [(f.entry.label, -1)] for p in f.params}
    pos: dict[int, tuple[str, int]] = {}
    for b in f.blocks:
        for i, ins in enumerate(b.instrs()):
            pos[id(ins)] = (b.label, i)
            if ins.dest is not None:
                sites.setdefault(ins.dest, []).append((b.label, i))
    bad = {v for v, s in sites.items() if len(s) > 1}
    for b in f.blocks:
        for i, ins in enumerate(b.instrs()):
            if ins.op == "phi":
                uses = [(v, p, 10**9) for v, p in ins.incoming]
            else:
                uses = [(v, b.label, i) for v in ins.args]
            for v, ub, ui in uses:
                if v in bad:
                    continue
                if v not in sites:
                    bad.add(v)
                    continue
                db, di = sites[v][0]
                if db == ub:
                    if di >= ui:
                        bad.add(v)
                elif not dom.dominates(db, ub):
                    bad.add(v)
    return bad


def repair_ssa(f: Function) -> set[str]:
    names = values_needing_repair(f)
    if names:
        rebuild_ssa(f, names)
    return names


def rebuild_ssa(f: Function, names: set[str]) -> None:
    """Rename all definitions of ``names`` into valid SSA, inserting phis as needed."""
    names = set(names) - {p.name for p in f.params}
    if not names:
        return
    dom = compute_dom_tree(f)
    succ = f.successors()
    preds = f.predecessors()
    df = dominance_frontiers(succ, dom)
    blocks = f.block_map()

    def_blocks: dict[str, set[str]] = {v: set() for v in names}
    for b, ins in f.instructions():
        if ins.dest in names:
            def_blocks[ins.dest].add(b.label)

    new_phis: dict[int, str] = {}  # id(phi) -> original name
    for v in sorted(names):
        work = list(def_blocks[v])
        placed: set[str] = set()
        while work:
            n = work.pop()
            for y in df.get(n, ()):
                if y not in placed:
                    placed.add(y)
                    phi = Instr("phi", v, incoming=[(v, p) for p in preds[y]])
                    blocks[y].phis.insert(0, phi)
                    new_phis[id(phi)] = v
                    if y not in def_blocks[v]:
                        work.append(y)

    taken = set(f.defined_values())
    for _, ins in f.instructions():
        taken.update(ins.uses())
    first_def = {v: True for v in names}

    def fresh(v: str) -> str:
        if first_def[v]:
            first_def[v] = False
            return v
        i = 1
        while f"{v}.{i}" in taken:
            i += 1
        name = f"{v}.{i}"
        taken.add(name)
        return name

    undef: dict[str, str] = {}

    def read(v: str, stacks) -> str:
        if stacks[v]:
            return stacks[v][-1]
        if v not in undef:
            name = f"{v}.undef"
            i = 1
            while name in taken:
                name = f"{v}.undef{i}"
                i += 1
            taken.add(name)
            undef[v] = name
            f.entry.body.insert(0, Instr("const", name, imm=[0]))
        return undef[v]

    stacks: dict[str, list[str]] = {v: [] for v in names}
    kids = dom.children()
    # iterative preorder walk with explicit pop markers
    work: list[tuple[str, bool]] = [(dom.root, True)]
    pushed_log: list[list[str]] = []
    while work:
        label, entering = work.pop()
        if not entering:
            for v in pushed_log.pop():
                stacks[v].pop()
            continue
        b = blocks[label]
        pushed: list[str] = []
        for phi in b.phis:
            if phi.dest in names:
                v = phi.dest
                phi.dest = fresh(v)
                stacks[v].append(phi.dest)
                pushed.append(v)
        for ins in list(b.body) + [b.term]:
            if ins.args:
                ins.args = [read(a, stacks) if a in names else a for a in ins.args]
            if ins.dest in names:
                v = ins.dest
                ins.dest = fresh(v)
                stacks[v].append(ins.dest)
                pushed.append(v)
        for s in succ[label]:
            for phi in blocks[s].phis:
                phi.incoming = [
                    (read(val, stacks) if (p == label and val in names) else val, p)
                    for val, p in phi.incoming
                ]
        pushed_log.append(pushed)
        work.append((label, False))
        for k in reversed(kids[label]):
            work.append((k, True))

    # drop inserted phis nobody reads
    inserted = {phi.dest for b in f.blocks for phi in b.phis if id(phi) in new_phis}
    remove_unused_phis(f, inserted)
    if undef:
        used = {u for _, ins in f.instructions() for u in ins.uses()}
        dead = set(undef.values()) - used
        f.entry.body = [i for i in f.entry.body if i.dest not in dead]
