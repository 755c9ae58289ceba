"""Lockstep warp simulator for Lowered modules.

Each warp owns a program counter, an active-lane mask, an IPDOM stack and
per-lane registers held as ``numpy.uint32`` vectors.  Warps are scheduled
round-robin, one instruction per turn, so a run is fully deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ir import MASK32, Function, Instr, Module
from .normalize import PipelineConfig

STEP_LIMIT = 10_000_000


class SimError(RuntimeError):
    def __init__(self, kind: str, msg: str):
        super().__init__(f"{kind}: {msg}")
        self.kind = kind


class UniformityViolation(SimError):
    def __init__(self, msg: str):
        super().__init__("UniformityViolation", msg)


class Launch(str, Enum):
    KERNEL = "kernel"
    RAW = "raw"


class EntryKind(str, Enum):
    UNANIMOUS = "Unanimous"
    DIVERGENT = "Divergent"


class Phase(str, Enum):
    AWAITING_ELSE = "AwaitingElse"
    ELSE_RUNNING = "ElseRunning"


class Status(str, Enum):
    ACTIVE = "Active"
    BARRIER = "AtBarrier"
    HALTED = "Halted"


@dataclass
class IpdomEntry:
    kind: EntryKind
    orig: int
    arm: int  # lanes of the arm currently running
    else_mask: int = 0
    else_pc: int = -1
    phase: Phase = Phase.AWAITING_ELSE


@dataclass
class MetricsReport:
    dyn_instrs: int = 0
    per_opcode: dict[str, int] = field(default_factory=dict)
    splits_executed: int = 0
    joins_executed: int = 0
    preds_executed: int = 0
    max_ipdom_depth: int = 0
    active_lanes: int = 0
    warp_size: int = 1
    barriers_hit: int = 0

    @property
    def simd_efficiency(self) -> float:
        if not self.dyn_instrs:
            return 1.0
        return self.active_lanes / (self.warp_size * self.dyn_instrs)

    def to_dict(self) -> dict:
        return {
            "barriers_hit": self.barriers_hit,
            "dyn_instrs": self.dyn_instrs,
            "joins_executed": self.joins_executed,
            "max_ipdom_depth": self.max_ipdom_depth,
            "per_opcode": dict(sorted(self.per_opcode.items())),
            "preds_executed": self.preds_executed,
            "simd_efficiency": round(self.simd_efficiency, 6),
            "splits_executed": self.splits_executed,
        }

    def to_json(self) -> str:
        d = self.to_dict()
        eff = f"{self.simd_efficiency:.6f}"
        d["simd_efficiency"] = "@EFF@"
        return json.dumps(d, sort_keys=True, indent=2).replace('"@EFF@"', eff) + "\n"


@dataclass
class Compiled:
    """A function flattened to one instruction list with resolved branch targets."""

    fn: Function
    code: list[Instr]
    targets: list[tuple[int, ...]]
    else_pc: dict[int, int]
    block_at: list[str]
    uniform: frozenset[str]
    restores: frozenset[int] = frozenset()  # tmc sites restoring an activemask value


def compile_function(f: Function, uniform: set[str] | None = None) -> Compiled:
    code: list[Instr] = []
    block_at: list[str] = []
    start: dict[str, int] = {}
    for b in f.blocks:
        start[b.label] = len(code)
        for ins in b.instrs():
            if ins.op == "phi":
                raise SimError("Stage", f"@{f.name}^{b.label}: phi in Lowered code")
            code.append(ins)
            block_at.append(b.label)
    targets = [tuple(start[t] for t in ins.targets) for ins in code]
    else_pc: dict[int, int] = {}
    for b in f.blocks:
        for ins in b.body:
            if ins.op == "split":
                if not b.term.is_cond_branch:
                    raise SimError("Split", f"@{f.name}^{b.label}: split without a conditional branch")
                idx = next(i for i, x in enumerate(code) if x is ins)
                else_pc[idx] = start[b.term.targets[1]]
    masks = {ins.dest for ins in code if ins.op == "activemask"}
    restores = frozenset(i for i, ins in enumerate(code) if ins.op == "tmc" and ins.args[0] in masks)
    return Compiled(f, code, targets, else_pc, block_at, frozenset(uniform or ()), restores)


@dataclass
class Frame:
    fn: Compiled
    regs: dict[str, np.ndarray]
    pc: int = 0
    ret_dest: str | None = None


@dataclass
class WarpState:
    wid: int
    mask: int
    frames: list[Frame]
    ipdom: list[IpdomEntry] = field(default_factory=list)
    status: Status = Status.ACTIVE
    barrier: tuple[int, int] | None = None


@dataclass
class SimResult:
    memory: np.ndarray
    rets: list[int | None]
    metrics: MetricsReport
    violations: list[str]
    warps: list[WarpState]


_CMP = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "slt": lambda a, b: a.view(np.int32) < b.view(np.int32),
    "sle": lambda a, b: a.view(np.int32) <= b.view(np.int32),
    "sgt": lambda a, b: a.view(np.int32) > b.view(np.int32),
    "sge": lambda a, b: a.view(np.int32) >= b.view(np.int32),
    "ult": lambda a, b: a < b,
}

_BIN = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "and": np.bitwise_and,
    "or": np.bitwise_or,
    "xor": np.bitwise_xor,
    "shl": lambda a, b: np.left_shift(a, b & np.uint32(31)),
    "shr": lambda a, b: np.right_shift(a, b & np.uint32(31)),
}


class Machine:
    def __init__(self, m: Module, cfg: PipelineConfig, uniform: dict[str, set[str]] | None = None,
                 mem_init=None, step_limit: int = STEP_LIMIT):
        self.m = m
        self.cfg = cfg
        self.W = cfg.warp_size
        self.funcs = {f.name: compile_function(f, (uniform or {}).get(f.name)) for f in m.functions}
        self.memory = np.zeros(cfg.mem_words, dtype=np.uint32)
        if mem_init is not None:
            init = np.asarray(mem_init, dtype=np.uint64).astype(np.uint32)
            self.memory[: len(init)] = init[: cfg.mem_words]
        self.full = (1 << self.W) - 1
        self.lanes = np.arange(self.W, dtype=np.uint32)
        self.weights = np.array([1 << i for i in range(self.W)], dtype=np.uint64)
        self._masks: dict[int, np.ndarray] = {}
        self.metrics = MetricsReport(warp_size=self.W)
        self.violations: list[str] = []
        self.warps: list[WarpState] = []
        self.rets: list[int | None] = [None] * (cfg.warp_count * self.W)
        self.step_limit = step_limit

    # -- helpers -----------------------------------------------------------
    def lanes_of(self, mask: int) -> np.ndarray:
        arr = self._masks.get(mask)
        if arr is None:
            arr = ((mask >> self.lanes.astype(np.uint64)) & 1).astype(bool) if self.W <= 63 else \
                np.array([(mask >> i) & 1 for i in range(self.W)], dtype=bool)
            self._masks[mask] = arr
        return arr

    def bits(self, arr: np.ndarray) -> int:
        return int((arr.astype(np.uint64) * self.weights).sum())

    def splat(self, v: int) -> np.ndarray:
        return np.full(self.W, v & MASK32, dtype=np.uint32)

    def first_lane(self, w: WarpState) -> int:
        return (w.mask & -w.mask).bit_length() - 1

    def scalar(self, w: WarpState, regs, name: str) -> int:
        return int(regs[name][self.first_lane(w)])

    def write(self, w: WarpState, frame: Frame, dest: str, val: np.ndarray) -> None:
        if frame.fn.uniform and dest in frame.fn.uniform:
            act = val[self.lanes_of(w.mask)]
            if act.size and (act != act[0]).any():
                raise UniformityViolation(
                    f"@{frame.fn.fn.name}: %{dest} differs across active lanes of warp {w.wid}: "
                    f"{sorted({int(x) for x in act})[:4]}")
        if w.mask == self.full:
            frame.regs[dest] = val.astype(np.uint32, copy=False)
        else:
            old = frame.regs.get(dest)
            if old is None:
                old = np.zeros(self.W, dtype=np.uint32)
            frame.regs[dest] = np.where(self.lanes_of(w.mask), val, old).astype(np.uint32)

    # -- launch --------------------------------------------------------------
    def _new_warp(self, wid: int, fn: Compiled, mask: int, args: dict[str, int]) -> WarpState:
        regs = {p.name: self.splat(args.get(p.name, 0)) for p in fn.fn.params}
        return WarpState(wid, mask, [Frame(fn, regs)])

    def launch(self, args: dict[str, int], mode: Launch = Launch.KERNEL) -> None:
        k = self.funcs[self.m.kernel.name]
        if mode is Launch.KERNEL:
            self.warps = [self._new_warp(w, k, self.full, args) for w in range(self.cfg.warp_count)]
        else:
            self.warps = [self._new_warp(0, k, 1, args)]
        self.args = args

    # -- main loop -----------------------------------------------------------
    def run(self) -> SimResult:
        steps = 0
        while True:
            progressed = False
            for w in list(self.warps):
                if w.status is Status.ACTIVE:
                    self.step(w)
                    progressed = True
                    steps += 1
                    if steps > self.step_limit:
                        raise SimError("StepLimit", f"exceeded {self.step_limit} steps")
            if not progressed:
                waiting = [w for w in self.warps if w.status is Status.BARRIER]
                if not waiting:
                    break
                if not self._release_barriers():
                    ids = sorted({w.barrier[0] for w in waiting})
                    raise SimError("Deadlock", f"barrier(s) {ids} can never release")
        for w in self.warps:
            if w.ipdom:
                self.violations.append(f"warp {w.wid}: halted with {len(w.ipdom)} open IPDOM entries")
        return SimResult(self.memory, self.rets, self.metrics, self.violations, self.warps)

    def _release_barriers(self) -> bool:
        live = [w for w in self.warps if w.status is not Status.HALTED]
        released = False
        for bid in sorted({w.barrier[0] for w in live if w.status is Status.BARRIER}):
            at = [w for w in live if w.status is Status.BARRIER and w.barrier[0] == bid]
            want = at[0].barrier[1] or len(live)
            if len(at) >= want:
                for w in at[:want] if at[0].barrier[1] else at:
                    w.status, w.barrier = Status.ACTIVE, None
                released = True
        return released

    # -- one instruction -------------------------------------------------------
    def step(self, w: WarpState) -> None:
        frame = w.frames[-1]
        fn = frame.fn
        pc = frame.pc
        ins = fn.code[pc]
        op = ins.op
        regs = frame.regs
        mt = self.metrics
        mt.dyn_instrs += 1
        mt.per_opcode[op] = mt.per_opcode.get(op, 0) + 1
        mt.active_lanes += w.mask.bit_count()
        frame.pc = pc + 1
        a = ins.args

        if op in _BIN:
            self.write(w, frame, ins.dest, _BIN[op](regs[a[0]], regs[a[1]]))
        elif op == "const":
            self.write(w, frame, ins.dest, self.splat(ins.imm[0]))
        elif op == "icmp":
            self.write(w, frame, ins.dest, _CMP[ins.cond](regs[a[0]], regs[a[1]]).astype(np.uint32))
        elif op == "mov":
            self.write(w, frame, ins.dest, regs[a[0]])
        elif op == "addr.add":
            self.write(w, frame, ins.dest, regs[a[0]] + regs[a[1]])
        elif op in ("cmov", "select"):
            self.write(w, frame, ins.dest, np.where(regs[a[0]] != 0, regs[a[1]], regs[a[2]]))
        elif op == "udiv":
            act = self.lanes_of(w.mask)
            d = regs[a[1]]
            if (d[act] == 0).any():
                raise SimError("DivByZero", f"@{fn.fn.name}^{fn.block_at[pc]}: udiv by zero")
            self.write(w, frame, ins.dest, regs[a[0]] // np.where(d == 0, np.uint32(1), d))
        elif op == "tid":
            self.write(w, frame, ins.dest, self.lanes + np.uint32(w.wid * self.W))
        elif op == "ntid":
            self.write(w, frame, ins.dest, self.splat(self.W))
        elif op == "wid":
            self.write(w, frame, ins.dest, self.splat(w.wid))
        elif op == "nwid":
            self.write(w, frame, ins.dest, self.splat(self.cfg.warp_count))
        elif op == "coreid":
            self.write(w, frame, ins.dest, self.splat(0))
        elif op == "load":
            act = self.lanes_of(w.mask)
            p = self._check_addr(regs[a[0]], act, fn, pc)
            self.write(w, frame, ins.dest, np.where(act, self.memory[np.where(act, p, 0)], 0))
        elif op == "store":
            act = self.lanes_of(w.mask)
            p = self._check_addr(regs[a[1]], act, fn, pc)
            v = regs[a[0]]
            for lane in np.flatnonzero(act):
                self.memory[p[lane]] = v[lane]
        elif op == "atomic_add":
            act = self.lanes_of(w.mask)
            p = self._check_addr(regs[a[0]], act, fn, pc)
            v = regs[a[1]]
            out = np.zeros(self.W, dtype=np.uint32)
            for lane in np.flatnonzero(act):
                out[lane] = self.memory[p[lane]]
                self.memory[p[lane]] = (int(out[lane]) + int(v[lane])) & MASK32
            self.write(w, frame, ins.dest, out)
        elif op in ("vote.all", "vote.any", "vote.ballot"):
            act = self.lanes_of(w.mask)
            c = regs[a[0]] != 0
            if op == "vote.all":
                r = int(bool(c[act].all()))
            elif op == "vote.any":
                r = int(bool(c[act].any()))
            else:
                r = self.bits(c & act) & MASK32
            self.write(w, frame, ins.dest, self.splat(r))
        elif op == "shfl":
            src = regs[a[1]]
            act = self.lanes_of(w.mask)
            ok = (src < self.W)
            idx = np.where(ok, src, 0).astype(np.intp)
            ok &= act[idx]
            self.write(w, frame, ins.dest, np.where(ok, regs[a[0]][idx], 0))
        elif op == "activemask":
            self.write(w, frame, ins.dest, self.splat(w.mask & MASK32))
        elif op == "assume_uniform":
            pass
        elif op == "split":
            self._split(w, frame, ins, pc)
        elif op == "join":
            self._join(w, frame, ins, fn, pc)
        elif op == "pred":
            mt.preds_executed += 1
            n = w.mask & self.bits(regs[a[0]] != 0)
            if n:
                w.mask = n
                frame.pc = fn.targets[pc][0]
            else:
                w.mask = self.scalar(w, regs, a[1]) & self.full
                frame.pc = fn.targets[pc][1]
        elif op == "tmc":
            new = self.scalar(w, regs, a[0]) & self.full
            if pc in fn.restores and new != w.mask:
                self.violations.append(
                    f"warp {w.wid} @{fn.fn.name}^{fn.block_at[pc]}: loop exit mask "
                    f"{w.mask:#x} differs from preheader mask {new:#x}")
            w.mask = new
            if new == 0:
                self._halt(w)
        elif op == "br":
            if len(ins.targets) == 1:
                frame.pc = fn.targets[pc][0]
            else:
                act = self.lanes_of(w.mask)
                c = regs[a[0]] != 0
                taken = c[act]
                if taken.all():
                    frame.pc = fn.targets[pc][0]
                elif not taken.any():
                    frame.pc = fn.targets[pc][1]
                else:
                    self.violations.append(
                        f"warp {w.wid} @{fn.fn.name}^{fn.block_at[pc]}: lanes disagree on an unguarded branch")
                    lane = self.first_lane(w)
                    frame.pc = fn.targets[pc][0 if c[lane] else 1]
        elif op == "barrier":
            bid, k = ins.imm
            if k > self.cfg.warp_count:
                raise SimError("Barrier", f"barrier {bid} waits for {k} warps, only {self.cfg.warp_count} exist")
            mt.barriers_hit += 1
            w.status, w.barrier = Status.BARRIER, (bid, k)
            self._release_barriers()
        elif op == "call":
            callee = self.funcs[ins.callee]
            nregs = {p.name: regs[x].copy() for p, x in zip(callee.fn.params, a)}
            w.frames.append(Frame(callee, nregs, 0, ins.dest))
        elif op == "ret":
            self._ret(w, frame, ins)
        elif op == "wspawn":
            n = self.scalar(w, regs, a[0])
            if n > self.cfg.warp_count:
                raise SimError("Spawn", f"wspawn of {n} warps exceeds warp count {self.cfg.warp_count}")
            target = self.funcs[ins.callee]
            have = {x.wid for x in self.warps}
            for wid in range(1, n):
                if wid not in have:
                    self.warps.append(self._new_warp(wid, target, self.full, self.args))
        else:
            raise SimError("Opcode", f"cannot execute {op}")

    def _check_addr(self, p: np.ndarray, act: np.ndarray, fn: Compiled, pc: int) -> np.ndarray:
        bad = act & (p >= self.cfg.mem_words)
        if bad.any():
            addr = int(p[np.flatnonzero(bad)[0]])
            raise SimError("OutOfBounds", f"@{fn.fn.name}^{fn.block_at[pc]}: address {addr}")
        return p

    def _split(self, w: WarpState, frame: Frame, ins: Instr, pc: int) -> None:
        self.metrics.splits_executed += 1
        c = self.bits(frame.regs[ins.args[0]] != 0)
        m = w.mask
        t = (m & ~c if ins.neg else m & c) & self.full
        e = m & ~t
        depth = len(w.ipdom) + 1
        # every lane of the split mask holds the token, including the else arm
        self.write(w, frame, ins.dest, self.splat(depth))
        self.metrics.max_ipdom_depth = max(self.metrics.max_ipdom_depth, depth)
        if t == 0 or e == 0:
            w.ipdom.append(IpdomEntry(EntryKind.UNANIMOUS, m, m))
        else:
            w.ipdom.append(IpdomEntry(EntryKind.DIVERGENT, m, t, e, frame.fn.else_pc[pc]))
            w.mask = t

    def _join(self, w: WarpState, frame: Frame, ins: Instr, fn: Compiled, pc: int) -> None:
        self.metrics.joins_executed += 1
        where = f"@{fn.fn.name}^{fn.block_at[pc]}"
        if not w.ipdom:
            raise SimError("JoinEmpty", f"{where}: join on an empty IPDOM stack (warp {w.wid})")
        tok = self.scalar(w, frame.regs, ins.args[0])
        if tok != len(w.ipdom):
            raise SimError("JoinToken", f"{where}: token {tok} but stack depth {len(w.ipdom)}")
        top = w.ipdom[-1]
        if w.mask != top.arm:
            self.violations.append(f"warp {w.wid} {where}: arm mask {w.mask:#x} at join, expected {top.arm:#x}")
        if w.mask & ~top.orig:
            self.violations.append(f"warp {w.wid} {where}: lanes outside the split's mask are active")
        if top.kind is EntryKind.DIVERGENT and top.phase is Phase.AWAITING_ELSE:
            top.phase = Phase.ELSE_RUNNING
            top.arm = top.else_mask
            w.mask = top.else_mask
            frame.pc = top.else_pc
            return
        w.ipdom.pop()
        w.mask = top.orig

    def _ret(self, w: WarpState, frame: Frame, ins: Instr) -> None:
        w.frames.pop()
        if w.frames:
            caller = w.frames[-1]
            if frame.ret_dest is not None:
                self.write(w, caller, frame.ret_dest, frame.regs[ins.args[0]])
            return
        if ins.args:
            vals = frame.regs[ins.args[0]]
            for lane in np.flatnonzero(self.lanes_of(w.mask)):
                g = w.wid * self.W + int(lane)
                if g < len(self.rets):
                    self.rets[g] = int(vals[lane])
        self._halt(w)

    def _halt(self, w: WarpState) -> None:
        w.status = Status.HALTED


def run_simt(m: Module, cfg: PipelineConfig, args: dict[str, int] | None = None, mem_init=None,
             launch: Launch | str = Launch.KERNEL, uniform: dict[str, set[str]] | None = None,
             step_limit: int = STEP_LIMIT) -> SimResult:
    mach = Machine(m, cfg, uniform, mem_init, step_limit)
    mach.launch(args or {}, Launch(launch))
    return mach.run()


def collect_metrics(result: SimResult) -> str:
    return result.metrics.to_json()
