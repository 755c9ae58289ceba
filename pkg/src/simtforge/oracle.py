"""Per-thread reference interpreter for High-stage modules.

Threads run one at a time, in ascending id order, up to their next barrier or
warp collective (``vote.*`` and ``shfl``).  Each thread resolves phis from the
block it came from.  Nothing here shares code with the lockstep simulator or
the passes; it reads the IR and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import MASK32, Function, Module

M = MASK32
THREAD_STEP_LIMIT = 1_000_000


class OracleError(RuntimeError):
    def __init__(self, kind: str, msg: str):
        super().__init__(f"{kind}: {msg}")
        self.kind = kind


class DeadlockError(OracleError):
    def __init__(self, msg: str):
        super().__init__("Deadlock", msg)


class OracleExcluded(Exception):
    """The kernel uses a warp collective where warp peers do not meet."""


def _signed(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


_CMP = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "slt": lambda a, b: _signed(a) < _signed(b),
    "sle": lambda a, b: _signed(a) <= _signed(b),
    "sgt": lambda a, b: _signed(a) > _signed(b),
    "sge": lambda a, b: _signed(a) >= _signed(b),
    "ult": lambda a, b: a < b,
}

_BIN = {
    "add": lambda a, b: (a + b) & M,
    "sub": lambda a, b: (a - b) & M,
    "mul": lambda a, b: (a * b) & M,
    "and": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "shl": lambda a, b: (a << (b & 31)) & M,
    "shr": lambda a, b: a >> (b & 31),
}

PLAIN, CALL, BARRIER, COLLECTIVE = range(4)


@dataclass
class _Block:
    label: str
    phis: list[tuple[str, dict[str, str]]]
    ops: list[tuple]
    term: tuple


@dataclass
class _Func:
    fn: Function
    blocks: dict[str, _Block] = field(default_factory=dict)


class _Program:
    """Closure-compiled view of a module, one instance per run."""

    def __init__(self, m: Module, memory: list[int], warp_size: int, warp_count: int):
        self.memory = memory
        self.W = warp_size
        self.nw = warp_count
        self.funcs = {f.name: _Func(f) for f in m.functions}
        for f in m.functions:
            for b in f.blocks:
                self.funcs[f.name].blocks[b.label] = self._block(f, b)

    def _block(self, f, b) -> _Block:
        phis = [(p.dest, {lbl: v for v, lbl in p.incoming}) for p in b.phis]
        ops = [self._op(f, b, ins) for ins in b.body]
        t = b.term
        if t.op == "ret":
            term = ("ret", t.args[0] if t.args else None)
        elif len(t.targets) == 1:
            term = ("jmp", t.targets[0])
        else:
            term = ("br", t.args[0], t.targets[0], t.targets[1])
        return _Block(b.label, phis, ops, term)

    def _op(self, f, b, ins):
        d, a, op = ins.dest, ins.args, ins.op
        mem = self.memory
        where = f"@{f.name}^{b.label}"

        def check(p):
            if p >= len(mem):
                raise OracleError("OutOfBounds", f"{where}: address {p}")
            return p

        if op in _BIN:
            fn, x, y = _BIN[op], a[0], a[1]

            def run(env):
                env[d] = fn(env[x], env[y])
        elif op == "const":
            k = ins.imm[0] & M

            def run(env):
                env[d] = k
        elif op == "icmp":
            cmp, x, y = _CMP[ins.cond], a[0], a[1]

            def run(env):
                env[d] = 1 if cmp(env[x], env[y]) else 0
        elif op == "udiv":
            x, y = a

            def run(env):
                if env[y] == 0:
                    raise OracleError("DivByZero", f"{where}: udiv by zero")
                env[d] = env[x] // env[y]
        elif op == "select":
            c, x, y = a

            def run(env):
                env[d] = env[x] if env[c] else env[y]
        elif op == "addr.add":
            x, y = a

            def run(env):
                env[d] = (env[x] + env[y]) & M
        elif op in ("tid", "ntid", "wid", "nwid", "coreid"):
            key = "\0" + op

            def run(env):
                env[d] = env[key]
        elif op == "load":
            (x,) = a

            def run(env):
                env[d] = mem[check(env[x])]
        elif op == "store":
            v, x = a

            def run(env):
                mem[check(env[x])] = env[v]
        elif op == "atomic_add":
            x, v = a

            def run(env):
                p = check(env[x])
                env[d] = mem[p]
                mem[p] = (mem[p] + env[v]) & M
        elif op == "assume_uniform":
            def run(env):
                pass
        elif op == "call":
            return (CALL, ins.callee, d, list(a))
        elif op == "barrier":
            return (BARRIER, ins.imm[0], ins.imm[1])
        elif op in ("vote.all", "vote.any", "vote.ballot", "shfl"):
            return (COLLECTIVE, id(ins), op, d, list(a))
        else:
            raise OracleError("Opcode", f"{where}: {op} is not a High-stage operation")
        return (PLAIN, run)

    def thread(self, fname: str, env: dict, budget: list[int]):
        """Generator running one call of ``fname``; yields at sync points, returns the ret value."""
        func = self.funcs[fname]
        blocks = func.blocks
        blk = blocks[func.fn.entry.label]
        prev = None
        while True:
            if blk.phis:
                vals = [env[inc[prev]] for _, inc in blk.phis]
                for (dest, _), v in zip(blk.phis, vals):
                    env[dest] = v
            budget[0] -= len(blk.ops) + 1
            if budget[0] < 0:
                raise OracleError("StepLimit", f"thread exceeded {THREAD_STEP_LIMIT} steps")
            for op in blk.ops:
                kind = op[0]
                if kind == PLAIN:
                    op[1](env)
                elif kind == CALL:
                    _, callee, dest, args = op
                    cf = self.funcs[callee].fn
                    sub = {k: v for k, v in env.items() if k[0] == "\0"}
                    for p, x in zip(cf.params, args):
                        sub[p.name] = env[x]
                    r = yield from self.thread(callee, sub, budget)
                    if dest is not None:
                        env[dest] = r if r is not None else 0
                elif kind == BARRIER:
                    yield ("barrier", op[1], op[2])
                else:
                    _, key, name, dest, args = op
                    env[dest] = yield ("coll", key, name, [env[x] for x in args])
            t = blk.term
            if t[0] == "ret":
                return env[t[1]] if t[1] is not None else None
            prev = blk.label
            if t[0] == "jmp":
                blk = blocks[t[1]]
            else:
                blk = blocks[t[2] if env[t[1]] else t[3]]


@dataclass
class Outcome:
    memory: list[int]
    rets: list[int | None]
    thread_instrs: int = 0

    def metrics(self) -> dict:
        return {"thread_instrs": self.thread_instrs, "threads": len(self.rets)}


def run_oracle(m: Module, cfg, args: dict[str, int] | None = None, mem_init=None) -> Outcome:
    args = args or {}
    W, nw = cfg.warp_size, cfg.warp_count
    memory = [0] * cfg.mem_words
    if mem_init is not None:
        for i, v in enumerate(list(mem_init)[: cfg.mem_words]):
            memory[i] = int(v) & M
    prog = _Program(m, memory, W, nw)
    kernel = m.kernel
    n = W * nw
    gens, states, rets = [], [], [None] * n
    budgets = [[THREAD_STEP_LIMIT] for _ in range(n)]
    for tid in range(n):
        env = {p.name: args.get(p.name, 0) & M for p in kernel.params}
        env.update({"\0tid": tid, "\0ntid": W, "\0wid": tid // W, "\0nwid": nw, "\0coreid": 0})
        gens.append(prog.thread(kernel.name, env, budgets[tid]))
        states.append(("run", None))
    done = [False] * n
    send: list = [None] * n
    while True:
        for tid in range(n):
            if done[tid] or states[tid][0] != "run":
                continue
            try:
                y = gens[tid].send(send[tid])
            except StopIteration as stop:
                done[tid] = True
                rets[tid] = stop.value
                states[tid] = ("done", None)
                continue
            send[tid] = None
            states[tid] = (y[0], y[1:])
        if all(done):
            break
        if _collectives(states, done, send, W, nw):
            continue
        if not _barriers(states, done, W, nw):
            waits = sorted({s[1][0] for s in states if s[0] == "barrier"})
            raise DeadlockError(f"barrier(s) {waits} can never release")
    used = sum(THREAD_STEP_LIMIT - b[0] for b in budgets)
    return Outcome(memory, rets, used)


def _collectives(states, done, send, W, nw) -> bool:
    progressed = False
    for w in range(nw):
        lanes = range(w * W, (w + 1) * W)
        waiting = [t for t in lanes if states[t][0] == "coll"]
        if not waiting:
            continue
        keys = {states[t][1][0] for t in waiting}
        if len(waiting) != W or len(keys) != 1:
            raise OracleExcluded(f"warp {w}: collective reached by {len(waiting)} of {W} threads")
        name = states[waiting[0]][1][1]
        vals = [states[t][1][2] for t in lanes]
        if name == "vote.all":
            r = [int(all(v[0] for v in vals))] * W
        elif name == "vote.any":
            r = [int(any(v[0] for v in vals))] * W
        elif name == "vote.ballot":
            bits = sum(1 << i for i, v in enumerate(vals) if v[0]) & M
            r = [bits] * W
        else:  # shfl: value of the source lane, 0 when out of range
            r = [vals[v[1]][0] if v[1] < W else 0 for v in vals]
        for i, t in enumerate(lanes):
            send[t] = r[i]
            states[t] = ("run", None)
        progressed = True
    return progressed


def _barriers(states, done, W, nw) -> bool:
    live = [t for t in range(len(states)) if not done[t]]
    ids = sorted({states[t][1][0] for t in live if states[t][0] == "barrier"})
    for bid in ids:
        at = [t for t in live if states[t][0] == "barrier" and states[t][1][0] == bid]
        k = states[at[0]][1][1]
        if k == 0:
            if len(at) == len(live):
                for t in at:
                    states[t] = ("run", None)
                return True
            continue
        warps = []
        for w in range(nw):
            members = [t for t in range(w * W, (w + 1) * W) if not done[t]]
            if members and all(states[t][0] == "barrier" and states[t][1][0] == bid for t in members):
                warps.append(members)
        if len(warps) >= k:
            for members in warps:
                for t in members:
                    states[t] = ("run", None)
            return True
    return False


@dataclass
class Comparison:
    match: bool
    report: list[str]

    def __bool__(self) -> bool:
        return self.match


def diff_outcomes(a, b, limit: int = 16) -> Comparison:
    """Bit-exact comparison of (memory, rets) pairs; lists the first ``limit`` differences."""
    ma, ra = list(a.memory), list(a.rets)
    mb, rb = list(b.memory), list(b.rets)
    report: list[str] = []
    if len(ma) != len(mb) or len(ra) != len(rb):
        return Comparison(False, [f"shape differs: memory {len(ma)}/{len(mb)}, threads {len(ra)}/{len(rb)}"])
    for i, (x, y) in enumerate(zip(ma, mb)):
        if int(x) != int(y):
            report.append(f"mem[{i}]: {int(x):#010x} != {int(y):#010x}")
            if len(report) >= limit:
                return Comparison(False, report)
    for t, (x, y) in enumerate(zip(ra, rb)):
        if x != y:
            report.append(f"ret[thread {t}]: {x} != {y}")
            if len(report) >= limit:
                break
    return Comparison(not report, report)
