"""Structural verifier.  Problems are reported as data, never raised."""

from __future__ import annotations

from dataclasses import dataclass

from .cfg import DomTree, idoms, invert, reachable
from .ir import (
    ARITY,
    BINARY_OPS,
    HIGH_ONLY,
    LOWERED_ONLY,
    Function,
    Instr,
    Module,
    Stage,
)


@dataclass(frozen=True)
class Violation:
    kind: str
    function: str
    block: str | None
    detail: str

    def __str__(self) -> str:
        where = f"@{self.function}" + (f"^{self.block}" if self.block else "")
        return f"{self.kind} {where}: {self.detail}"


ANY = "*"  # literal constants fit any type


def infer_types(f: Function, callee_ret: dict[str, str] | None = None) -> dict[str, str]:
    types: dict[str, str] = {p.name: p.type for p in f.params}
    callee_ret = callee_ret or {}
    changed = True
    while changed:
        changed = False
        for _, ins in f.instructions():
            if ins.dest is None or ins.dest in types and types[ins.dest] != ANY:
                continue
            t = _result_type(ins, types, callee_ret)
            if t is not None and types.get(ins.dest) != t:
                types[ins.dest] = t
                changed = True
    return types


def _result_type(ins: Instr, types, callee_ret) -> str | None:
    op = ins.op
    if op == "const":
        return ANY
    if op in ("icmp", "vote.all", "vote.any"):
        return "i1"
    if op in ("and", "or", "xor"):
        ts = {types.get(a) for a in ins.args}
        if ts <= {"i1", ANY} and "i1" in ts:
            return "i1"
        return "i32" if None not in ts else None
    if op in BINARY_OPS or op in ("tid", "ntid", "wid", "nwid", "coreid", "load",
                                   "atomic_add", "vote.ballot", "split", "activemask"):
        return "i32"
    if op == "addr.add":
        return "addr"
    if op in ("select", "cmov"):
        return _join(types.get(ins.args[1]), types.get(ins.args[2]))
    if op in ("mov", "shfl"):
        return types.get(ins.args[0])
    if op == "phi":
        out = None
        for v, _ in ins.incoming:
            out = _join(out, types.get(v))
        return out
    if op == "call":
        return callee_ret.get(ins.callee, "i32")
    return None


def _join(a, b):
    if a is None or a == ANY:
        return b if b is not None else a
    return a


def _fits(actual: str | None, want: tuple[str, ...]) -> bool:
    return actual is None or actual == ANY or actual in want


def _ret_types(m: Module) -> dict[str, str]:
    out: dict[str, str] = {}
    for _ in range(len(m.functions) + 1):
        for f in m.functions:
            types = infer_types(f, out)
            for b in f.blocks:
                if b.term.op == "ret" and b.term.args:
                    t = types.get(b.term.args[0])
                    if t not in (None, ANY):
                        out[f.name] = t
    return out


def verify_module(m: Module) -> list[Violation]:
    out: list[Violation] = []
    names = [f.name for f in m.functions]
    for n in sorted({n for n in names if names.count(n) > 1}):
        out.append(Violation("DuplicateFunction", n, None, "function defined twice"))
    kernels = [f for f in m.functions if f.kernel]
    if len(kernels) != 1:
        out.append(Violation("KernelCount", kernels[0].name if kernels else "-", None,
                             f"{len(kernels)} kernel functions"))
    funcs = {f.name: f for f in m.functions}
    rets = _ret_types(m)
    for f in m.functions:
        out.extend(_verify_function(f, m.stage, funcs, rets))
    out.extend(_recursion(m))
    return out


def _recursion(m: Module) -> list[Violation]:
    calls = {f.name: sorted({i.callee for _, i in f.instructions() if i.op == "call"})
             for f in m.functions}
    out = []
    for k in (f for f in m.functions if f.kernel):
        # DFS for a cycle reachable from the kernel
        state: dict[str, int] = {}

        def visit(n, path, state=state):
            state[n] = 1
            for c in calls.get(n, ()):
                if state.get(c) == 1:
                    out.append(Violation("Recursion", c, None, " -> ".join(path + [c])))
                elif c not in state:
                    visit(c, path + [c], state)
            state[n] = 2

        visit(k.name, [k.name])
    return out


def _verify_function(f: Function, stage: Stage, funcs, rets) -> list[Violation]:
    out: list[Violation] = []

    def bad(kind, block, detail):
        out.append(Violation(kind, f.name, block, detail))

    if not f.blocks:
        bad("EmptyFunction", None, "no blocks")
        return out
    labels = [b.label for b in f.blocks]
    for lbl in sorted({x for x in labels if labels.count(x) > 1}):
        bad("DuplicateLabel", lbl, "label defined twice")
    label_set = set(labels)
    if f.entry.phis:
        bad("PhiInEntry", f.entry.label, "entry block has phis")
    params = {p.name for p in f.params}
    if len(params) != len(f.params):
        bad("DuplicateDef", None, "duplicate parameter")

    # opcodes, arity, stage, targets
    for b in f.blocks:
        if b.term is None or not b.term.is_terminator:
            bad("MissingTerminator", b.label, "block does not end in a terminator")
        for ins in list(b.phis) + list(b.body):
            if ins.is_terminator:
                bad("MisplacedTerminator", b.label, f"{ins.op} inside block body")
        for ins in b.phis:
            if ins.op != "phi":
                bad("MisplacedPhi", b.label, f"{ins.op} in phi list")
        for ins in b.body:
            if ins.op == "phi":
                bad("MisplacedPhi", b.label, "phi in block body")
        for ins in b.instrs():
            if ins.op not in ARITY:
                bad("UnknownOpcode", b.label, ins.op)
                continue
            want = ARITY[ins.op]
            if want is not None and len(ins.args) != want:
                bad("ArityMismatch", b.label, f"{ins.op} takes {want} operands")
            if ins.op == "br" and (len(ins.targets), len(ins.args)) not in ((1, 0), (2, 1)):
                bad("ArityMismatch", b.label, "malformed br")
            if ins.op == "pred" and len(ins.targets) != 2:
                bad("ArityMismatch", b.label, "pred needs two targets")
            if ins.op == "ret" and len(ins.args) > 1:
                bad("ArityMismatch", b.label, "ret takes at most one value")
            if ins.neg and ins.op != "split":
                bad("BadAttribute", b.label, f"negate flag on {ins.op}")
            for t in ins.targets:
                if t not in label_set:
                    bad("UnknownLabel", b.label, f"^{t}")
            if ins.op in ("call", "wspawn"):
                callee = funcs.get(ins.callee)
                if callee is None:
                    bad("UnknownCallee", b.label, f"@{ins.callee}")
                elif ins.op == "call" and len(callee.params) != len(ins.args):
                    bad("CallArity", b.label, f"@{ins.callee} expects {len(callee.params)} args")
            if stage is Stage.HIGH and ins.op in LOWERED_ONLY:
                bad("StageViolation", b.label, f"{ins.op} not allowed in high stage")
            if stage is Stage.LOWERED and ins.op in HIGH_ONLY:
                bad("StageViolation", b.label, f"{ins.op} not allowed in lowered stage")

    if any(v.kind in ("UnknownLabel", "MissingTerminator", "DuplicateLabel") for v in out):
        return out

    succ = f.successors()
    pred = invert(succ)
    for b in f.blocks:
        ps = set(pred.get(b.label, ()))
        for phi in b.phis:
            inc = [p for _, p in phi.incoming]
            if set(inc) != ps or len(inc) != len(set(inc)):
                bad("PhiEdgeMismatch", b.label,
                    f"%{phi.dest} lists {sorted(inc)}, predecessors are {sorted(ps)}")

    # single definition
    def_sites: dict[str, list[tuple[str, int, Instr]]] = {p.name: [(f.entry.label, -1, None)] for p in f.params}
    for b in f.blocks:
        for i, ins in enumerate(b.instrs()):
            if ins.dest is not None:
                def_sites.setdefault(ins.dest, []).append((b.label, i, ins))
    multi = set()
    for v, sites in def_sites.items():
        if len(sites) > 1:
            movs = all(s[2] is not None and s[2].op == "mov" for s in sites)
            if stage is Stage.LOWERED and movs:
                multi.add(v)
            else:
                bad("DuplicateDef", sites[1][0], f"%{v} defined {len(sites)} times")
                multi.add(v)

    # defs dominate uses
    live = reachable(succ, f.entry.label)
    idom, _ = idoms(succ, f.entry.label)
    dom = DomTree(idom, [], f.entry.label)
    for b in f.blocks:
        if b.label not in live:
            continue
        for i, ins in enumerate(b.instrs()):
            if ins.op == "phi":
                uses = [(v, p, None) for v, p in ins.incoming]
            else:
                uses = [(v, b.label, i) for v in ins.args]
            for v, ub, ui in uses:
                if v not in def_sites:
                    bad("UndefinedValue", b.label, f"%{v}")
                    continue
                if v in multi or ub not in live:
                    continue
                db, di, _ = def_sites[v][0]
                if db not in live:
                    bad("UseNotDominated", b.label, f"%{v} defined in unreachable ^{db}")
                elif db == ub and ui is not None:
                    if di >= ui:
                        bad("UseNotDominated", b.label, f"%{v} used before its definition")
                elif not dom.dominates(db, ub):
                    bad("UseNotDominated", b.label, f"%{v} defined in ^{db}")

    # operand types
    types = infer_types(f, rets)
    for b in f.blocks:
        for ins in b.instrs():
            checks: list[tuple[str, tuple[str, ...]]] = []
            if ins.op == "br" and ins.args or ins.op in ("split", "select", "cmov"):
                checks.append((ins.args[0], ("i1",)))
            elif ins.op == "pred":
                checks += [(ins.args[0], ("i1",)), (ins.args[1], ("i32",))]
            elif ins.op in ("load", "atomic_add") and ins.args:
                checks.append((ins.args[0], ("addr",)))
            elif ins.op == "store" and len(ins.args) == 2:
                checks.append((ins.args[1], ("addr",)))
            elif ins.op == "addr.add" and len(ins.args) == 2:
                checks += [(ins.args[0], ("addr", "i32")), (ins.args[1], ("i32", "i1"))]
            elif ins.op == "join":
                checks.append((ins.args[0], ("i32",)))
            elif ins.op in BINARY_OPS:
                checks += [(a, ("i32", "i1")) for a in ins.args]
            for v, want in checks:
                if not _fits(types.get(v), want):
                    bad("TypeMismatch", b.label, f"{ins.op}: %{v} is {types.get(v)}, expected {'/'.join(want)}")

    if stage is Stage.LOWERED:
        out.extend(split_discipline(f))
    return out


def split_discipline(f: Function) -> list[Violation]:
    """Each split sits right before a conditional branch that reads the same predicate.

    ``split.neg %c`` pairs with a branch on ``xor %c, 1``.
    """
    defs = {ins.dest: ins for _, ins in f.instructions() if ins.dest is not None}
    out = []
    for b in f.blocks:
        for i, ins in enumerate(b.body):
            if ins.op != "split":
                continue
            if i != len(b.body) - 1 or not b.term.is_cond_branch:
                out.append(Violation("SplitAdjacency", f.name, b.label,
                                     f"%{ins.dest} is not immediately followed by its branch"))
                continue
            c, bc = ins.args[0], b.term.args[0]
            if not ins.neg and bc == c:
                continue
            if ins.neg and is_negation_of(defs, bc, c):
                continue
            out.append(Violation("SplitPolarity", f.name, b.label,
                                 f"split{'.neg' if ins.neg else ''} %{c} guards br %{bc}"))
    return out


def is_negation_of(defs: dict[str, Instr], a: str, b: str) -> bool:
    """True when ``a`` is defined as ``xor b, 1`` (either operand order)."""
    d = defs.get(a)
    if d is None or d.op != "xor":
        return False
    x, y = d.args
    for v, other in ((x, y), (y, x)):
        od = defs.get(other)
        if v == b and od is not None and od.op == "const" and od.imm[0] == 1:
            return True
    return False
