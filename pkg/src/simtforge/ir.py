"""Core data structures for the SSA kernel IR.

A :class:`Module` holds functions; a :class:`Function` holds an ordered list
of :class:`Block` objects whose first element is the entry.  Every block keeps
its phis, its straight-line body and a single terminator separately so that
passes never have to search for them.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field
from enum import Enum

MASK32 = 0xFFFFFFFF


class Stage(str, Enum):
    HIGH = "high"
    LOWERED = "lowered"


BINARY_OPS = ("add", "sub", "mul", "udiv", "and", "or", "xor", "shl", "shr")
ICMP_PREDS = ("eq", "ne", "slt", "sle", "sgt", "sge", "ult")
CSR_OPS = ("tid", "ntid", "wid", "nwid", "coreid")
VOTE_OPS = ("vote.all", "vote.any", "vote.ballot")
TERMINATORS = ("br", "ret", "pred")

HIGH_ONLY = frozenset({"phi", "select"})
LOWERED_ONLY = frozenset(
    {"split", "join", "pred", "tmc", "activemask", "wspawn", "cmov", "mov"}
)

# opcode -> number of value operands (None: variable)
ARITY: dict[str, int | None] = {
    **{op: 2 for op in BINARY_OPS},
    "const": 0,
    "icmp": 2,
    "select": 3,
    "phi": None,
    **{op: 0 for op in CSR_OPS},
    "load": 1,
    "store": 2,
    "addr.add": 2,
    "atomic_add": 2,
    **{op: 1 for op in VOTE_OPS},
    "shfl": 2,
    "call": None,
    "assume_uniform": 1,
    "barrier": 0,
    "split": 1,
    "join": 1,
    "pred": 2,
    "tmc": 1,
    "activemask": 0,
    "wspawn": 1,
    "cmov": 3,
    "mov": 1,
    "br": None,
    "ret": None,
}

# opcodes that never define a value
NO_RESULT = frozenset(
    {"store", "assume_uniform", "barrier", "join", "tmc", "wspawn", "br", "ret", "pred"}
)

OPCODES = frozenset(ARITY)


@dataclass
class Param:
    name: str
    type: str
    uniform: bool = False


@dataclass
class Instr:
    op: str
    dest: str | None = None
    args: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    imm: list[int] = field(default_factory=list)
    cond: str | None = None
    callee: str | None = None
    incoming: list[tuple[str, str]] = field(default_factory=list)
    neg: bool = False
    line: int = field(default=0, compare=False, repr=False)

    def uses(self) -> list[str]:
        if self.op == "phi":
            return [v for v, _ in self.incoming]
        return list(self.args)

    def replace_uses(self, mapping: dict[str, str]) -> None:
        if self.op == "phi":
            self.incoming = [(mapping.get(v, v), b) for v, b in self.incoming]
        else:
            self.args = [mapping.get(a, a) for a in self.args]

    def replace_target(self, old: str, new: str) -> None:
        self.targets = [new if t == old else t for t in self.targets]

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    @property
    def is_cond_branch(self) -> bool:
        return self.op == "br" and len(self.targets) == 2

    def incoming_from(self, label: str) -> str | None:
        for v, b in self.incoming:
            if b == label:
                return v
        return None


@dataclass
class Block:
    label: str
    phis: list[Instr] = field(default_factory=list)
    body: list[Instr] = field(default_factory=list)
    term: Instr = field(default_factory=lambda: Instr("ret"))

    def instrs(self):
        yield from self.phis
        yield from self.body
        yield self.term

    def successors(self) -> list[str]:
        out: list[str] = []
        for t in self.term.targets:
            if t not in out:
                out.append(t)
        return out


@dataclass
class Function:
    name: str
    params: list[Param] = field(default_factory=list)
    blocks: list[Block] = field(default_factory=list)
    kernel: bool = False
    internal: bool = False

    @property
    def entry(self) -> Block:
        return self.blocks[0]

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def block_map(self) -> dict[str, Block]:
        return {b.label: b for b in self.blocks}

    def successors(self) -> dict[str, list[str]]:
        return {b.label: b.successors() for b in self.blocks}

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                if s in preds and b.label not in preds[s]:
                    preds[s].append(b.label)
        return preds

    def exit_blocks(self) -> list[str]:
        return [b.label for b in self.blocks if b.term.op == "ret"]

    def instructions(self):
        for b in self.blocks:
            for ins in b.instrs():
                yield b, ins

    def defined_values(self) -> list[str]:
        names = [p.name for p in self.params]
        for _, ins in self.instructions():
            if ins.dest is not None:
                names.append(ins.dest)
        return names

    def def_sites(self) -> dict[str, list[str]]:
        """Value name -> labels of the blocks defining it (params map to [])."""
        sites: dict[str, list[str]] = {p.name: [] for p in self.params}
        for b, ins in self.instructions():
            if ins.dest is not None:
                sites.setdefault(ins.dest, []).append(b.label)
        return sites

    def fresh_value(self, base: str) -> str:
        taken = set(self.defined_values())
        for _, ins in self.instructions():
            taken.update(ins.uses())
        return _fresh(base, taken)

    def fresh_label(self, base: str) -> str:
        return _fresh(base, {b.label for b in self.blocks})

    def insert_block_after(self, anchor: str, block: Block) -> None:
        idx = [b.label for b in self.blocks].index(anchor)
        self.blocks.insert(idx + 1, block)

    def retarget_phis(self, label: str, old_pred: str, new_pred: str) -> None:
        """Rename the incoming edge ``old_pred`` of ``label``'s phis to ``new_pred``."""
        for phi in self.block(label).phis:
            phi.incoming = [(v, new_pred if b == old_pred else b) for v, b in phi.incoming]

    def clone(self) -> Function:
        return copy.deepcopy(self)


@dataclass
class Module:
    functions: list[Function] = field(default_factory=list)
    stage: Stage = Stage.HIGH

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def kernel(self) -> Function:
        for f in self.functions:
            if f.kernel:
                return f
        raise KeyError("module has no kernel")

    def clone(self) -> Module:
        return copy.deepcopy(self)


def _fresh(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    for i in itertools.count(1):
        cand = f"{base}.{i}"
        if cand not in taken:
            return cand
    raise AssertionError("unreachable")


def const_value(f: Function, name: str) -> int | None:
    """Return the literal of ``name`` when it is defined by ``const``."""
    for _, ins in f.instructions():
        if ins.dest == name:
            return ins.imm[0] if ins.op == "const" else None
    return None


def definitions(f: Function) -> dict[str, Instr]:
    out: dict[str, Instr] = {}
    for _, ins in f.instructions():
        if ins.dest is not None:
            out.setdefault(ins.dest, ins)
    return out


def to_signed(v: int) -> int:
    v &= MASK32
    return v - (1 << 32) if v & 0x80000000 else v
