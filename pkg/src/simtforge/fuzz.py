"""Seeded generator of structured High-stage kernels, and the fuzz driver.

Generated kernels nest if, if/else and while up to depth 3 and mix conditions
on the lane id and loaded data with conditions on uniform values.  Trip counts
are bounded per lane.  Memory traffic is arranged so that no two threads race:

* ``%src`` is read-only input, read at ``tid + k`` for small ``k``;
* each thread stores only to its own slots ``%out + r*T + tid`` (``T`` threads),
  using rows 0 and 1 before the optional barrier and rows 2 and 3 after it;
* after the barrier a thread may read its neighbour's row-0 slot, which no one
  writes any more;
* atomic adds hit ``%out + 4T + j`` and their results are never used.

The barrier, when present, sits at nest depth 0 where every thread arrives.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .harness import compare, with_warps
from .normalize import PipelineConfig
from .parser import parse_module
from .pipeline import run_pipeline

BIN_OPS = ("add", "sub", "mul", "xor", "and", "or")
CMP_PREDS = ("eq", "ne", "slt", "sle", "sgt", "sge", "ult")
MAX_DEPTH = 3


@dataclass
class _Block:
    label: str
    lines: list[str] = field(default_factory=list)
    term: str = ""


class KernelGen:
    """Builds one kernel as .vir text; variables are renamed into SSA as it goes."""

    def __init__(self, rng: random.Random, name: str):
        self.rng = rng
        self.name = name
        self.blocks: list[_Block] = []
        self.counter = 0
        self.consts: dict[int, str] = {}
        self.env: dict[str, str] = {}
        self.uniform: set[str] = set()  # SSA names known to be uniform
        self.after_barrier = False
        self.cur = self._block("entry")

    # -- low-level emission ----------------------------------------------------
    def _block(self, hint: str) -> _Block:
        label = hint if hint == "entry" else f"{hint}{len(self.blocks)}"
        b = _Block(label)
        self.blocks.append(b)
        return b

    def fresh(self, hint: str = "v") -> str:
        self.counter += 1
        return f"{hint}{self.counter}"

    def emit(self, text: str, hint: str = "v", uniform: bool = False) -> str:
        d = self.fresh(hint)
        self.cur.lines.append(f"%{d} = {text}")
        if uniform:
            self.uniform.add(d)
        return d

    def const(self, k: int) -> str:
        if k not in self.consts:
            d = self.fresh("k")
            self.blocks[0].lines.insert(0, f"%{d} = const {k}")
            self.uniform.add(d)
            self.consts[k] = d
        return self.consts[k]

    def is_uniform(self, v: str) -> bool:
        return v in self.uniform

    # -- kernel prologue -------------------------------------------------------
    def prologue(self) -> None:
        self.tid = self.emit("tid", "t")
        w = self.emit("ntid", "w", uniform=True)
        nw = self.emit("nwid", "nw", uniform=True)
        self.total = self.emit(f"mul %{w}, %{nw}", "total", uniform=True)
        rows = {}
        for r in range(1, 5):
            rows[r] = self.emit(f"mul %{self.total}, %{self.const(r)}", "row", uniform=True)
        self.rows = rows
        ps = self.emit(f"addr.add %src, %{self.tid}", "ps")
        self.env["a"] = self.tid
        self.env["b"] = self.emit(f"load %{ps}", "ld")
        self.env["c"] = "n"
        self.uniform.add("n")
        self.env["d"] = self.const(self.rng.randrange(1, 9))

    # -- expressions and statements ------------------------------------------------
    def pick(self, want_uniform: bool | None = None) -> str:
        names = sorted(self.env)
        vals = [self.env[n] for n in names]
        if want_uniform:
            vals = [v for v in vals if self.is_uniform(v)] or [self.const(self.rng.randrange(0, 5))]
        return self.rng.choice(vals)

    def assign(self) -> None:
        rng = self.rng
        var = rng.choice(sorted(self.env))
        x = self.pick()
        kind = rng.random()
        if kind < 0.6:
            op = rng.choice(BIN_OPS)
            y = self.pick() if rng.random() < 0.6 else self.const(rng.randrange(0, 16))
            d = self.emit(f"{op} %{x}, %{y}", uniform=self.is_uniform(x) and self.is_uniform(y))
        elif kind < 0.72:
            op = rng.choice(("shl", "shr"))
            d = self.emit(f"{op} %{x}, %{self.const(rng.randrange(0, 5))}", uniform=self.is_uniform(x))
        elif kind < 0.8:
            y = self.pick()
            nz = self.emit(f"or %{y}, %{self.const(1)}", uniform=self.is_uniform(y))
            d = self.emit(f"udiv %{x}, %{nz}", uniform=self.is_uniform(x) and self.is_uniform(y))
        elif kind < 0.9:
            c = self.cond()
            y = self.pick()
            u = self.is_uniform(c) and self.is_uniform(x) and self.is_uniform(y)
            d = self.emit(f"select %{c}, %{x}, %{y}", uniform=u)
        else:
            k = self.const(rng.randrange(0, 64))
            off = self.emit(f"add %{self.tid}, %{k}")
            p = self.emit(f"addr.add %src, %{off}", "p")
            d = self.emit(f"load %{p}", "ld")
        self.env[var] = d

    def cond(self, uniform: bool = False) -> str:
        x = self.pick(want_uniform=uniform or None)
        y = self.pick(want_uniform=True) if self.rng.random() < 0.5 else self.const(self.rng.randrange(0, 12))
        pred = self.rng.choice(CMP_PREDS)
        return self.emit(f"icmp {pred} %{x}, %{y}", "c", uniform=self.is_uniform(x) and self.is_uniform(y))

    def slot(self, row: int) -> str:
        base = self.tid if row == 0 else self.emit(f"add %{self.rows[row]}, %{self.tid}")
        return self.emit(f"addr.add %out, %{base}", "o")

    def store(self) -> None:
        row = self.rng.choice((2, 3) if self.after_barrier else (0, 1))
        self.cur.lines.append(f"store %{self.pick()}, %{self.slot(row)}")

    def reload(self) -> None:
        row = self.rng.choice((2, 3) if self.after_barrier else (0, 1))
        var = self.rng.choice(sorted(self.env))
        self.env[var] = self.emit(f"load %{self.slot(row)}", "ld")

    def atomic(self) -> None:
        j = self.emit(f"and %{self.pick()}, %{self.const(15)}")
        off = self.emit(f"add %{self.rows[4]}, %{j}")
        p = self.emit(f"addr.add %out, %{off}", "o")
        self.emit(f"atomic_add %{p}, %{self.pick()}", "old")

    def neighbour(self) -> None:
        nxt = self.emit(f"add %{self.tid}, %{self.const(1)}")
        p = self.emit(f"addr.add %out, %{nxt}", "o")
        var = self.rng.choice(sorted(self.env))
        self.env[var] = self.emit(f"load %{p}", "ld")

    def vote(self) -> None:
        c = self.cond()
        op = self.rng.choice(("vote.any", "vote.all", "vote.ballot"))
        var = self.rng.choice(sorted(self.env))
        self.env[var] = self.emit(f"{op} %{c}", "vt", uniform=True)

    # -- structured control flow --------------------------------------------------
    def body(self, depth: int) -> None:
        rng = self.rng
        for _ in range(rng.randint(1, 3)):
            r = rng.random()
            if depth < MAX_DEPTH and r < 0.35:
                rng.choice((self.if_then, self.if_else, self.if_else, self.loop))(depth + 1)
            elif r < 0.5:
                self.store()
            elif r < 0.55:
                self.reload()
            elif r < 0.6:
                self.atomic()
            elif depth == 0 and r < 0.65:
                self.vote()
            else:
                self.assign()

    def _goto(self, label: str) -> None:
        self.cur.term = f"br ^{label}"

    def _merge(self, arms: list[tuple[str, dict[str, str]]], jump_from: list[_Block],
               cond_uniform: bool) -> _Block:
        """Start a join block and add phis for variables whose arm values differ."""
        join = self._block("join")
        for blk in jump_from:
            blk.term = f"br ^{join.label}"
        self.cur = join
        env = {}
        for var in sorted(arms[0][1]):
            vals = [e[var] for _, e in arms]
            if len(set(vals)) == 1:
                env[var] = vals[0]
                continue
            inc = ", ".join(f"[%{v}, ^{lbl}]" for v, (lbl, _) in zip(vals, arms))
            u = cond_uniform and all(self.is_uniform(v) for v in vals)
            env[var] = self.emit(f"phi {inc}", "m", uniform=u)
        self.env = env
        return join

    def if_then(self, depth: int) -> None:
        c = self.cond(uniform=self.rng.random() < 0.3)
        head, before = self.cur, dict(self.env)
        then = self._block("then")
        self.cur = then
        self.body(depth)
        end_then = self.cur
        join = self._merge([(end_then.label, dict(self.env)), (head.label, before)], [end_then],
                           self.is_uniform(c))
        head.term = f"br %{c}, ^{then.label}, ^{join.label}"

    def if_else(self, depth: int) -> None:
        c = self.cond(uniform=self.rng.random() < 0.3)
        head, before = self.cur, dict(self.env)
        then = self._block("then")
        self.cur = then
        self.body(depth)
        end_then, env_then = self.cur, dict(self.env)
        self.env = dict(before)
        other = self._block("else")
        self.cur = other
        self.body(depth)
        end_else, env_else = self.cur, dict(self.env)
        head.term = f"br %{c}, ^{then.label}, ^{other.label}"
        self._merge([(end_then.label, env_then), (end_else.label, env_else)], [end_then, end_else],
                    self.is_uniform(c))

    def loop(self, depth: int) -> None:
        rng = self.rng
        if rng.random() < 0.4:
            bound = self.emit(f"and %{self.pick(want_uniform=True)}, %{self.const(3)}", uniform=True)
        else:
            x = self.pick()
            bound = self.emit(f"and %{x}, %{self.const(3)}", uniform=self.is_uniform(x))
        pre = self.cur
        head = self._block("head")
        self._goto(head.label)
        self.cur = head
        before = dict(self.env)
        i = self.fresh("i")
        phis = {var: self.fresh("h") for var in sorted(before)}
        self.env = dict(phis)
        c = self.emit(f"icmp slt %{i}, %{bound}", "c")
        body = self._block("body")
        self.cur = body
        self.body(depth)
        i2 = self.emit(f"add %{i}, %{self.const(1)}", "i")
        latch = self.cur
        latch.term = f"br ^{head.label}"
        u = self.is_uniform(bound)
        lines = [f"%{i} = phi [%{self.const(0)}, ^{pre.label}], [%{i2}, ^{latch.label}]"]
        for var, h in phis.items():
            lines.append(f"%{h} = phi [%{before[var]}, ^{pre.label}], [%{self.env[var]}, ^{latch.label}]")
            if u and self.is_uniform(before[var]) and self.is_uniform(self.env[var]):
                self.uniform.add(h)
        if u:
            self.uniform.update({i, i2, c})
        head.lines[:0] = lines
        exit_ = self._block("exit")
        head.term = f"br %{c}, ^{body.label}, ^{exit_.label}"
        self.cur = exit_
        self.env = dict(phis)

    # -- whole kernel -------------------------------------------------------------
    def build(self) -> str:
        rng = self.rng
        self.prologue()
        barrier_at = rng.randrange(4) if rng.random() < 0.3 else -1
        for step in range(rng.randint(2, 4)):
            if step == barrier_at:
                self.cur.lines.append("barrier 0, 0")
                self.after_barrier = True
                self.neighbour()
            self.body(0)
        acc = self.env["a"]
        for var in ("b", "c", "d"):
            acc = self.emit(f"xor %{acc}, %{self.env[var]}")
        row = 2 if self.after_barrier else 0
        self.cur.lines.append(f"store %{acc}, %{self.slot(row)}")
        self.cur.term = f"ret %{acc}" if rng.random() < 0.3 else "ret"
        out = [f"; fuzz kernel {self.name}", f"kernel @{self.name}(%src: addr, %out: addr, %n: i32 uniform) {{"]
        for b in self.blocks:
            out.append(f"{b.label}:")
            out.extend(f"  {line}" for line in b.lines)
            out.append(f"  {b.term}")
        out.append("}")
        return "\n".join(out) + "\n"


def generate_kernel(seed: int, name: str | None = None) -> str:
    """The .vir text of the fuzz kernel for ``seed``."""
    return KernelGen(random.Random(seed), name or f"fuzz{seed}").build()


# ---------------------------------------------------------------------------
# driver


@dataclass
class FuzzCase:
    index: int
    seed: int
    configs: list[str]
    verdict: str
    report: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"index": self.index, "seed": self.seed, "configs": self.configs,
                "verdict": self.verdict, "report": self.report}


@dataclass
class FuzzReport:
    seed: int
    count: int
    cases: list[FuzzCase]

    @property
    def passed(self) -> int:
        return sum(c.verdict == "Match" for c in self.cases)

    @property
    def failures(self) -> list[FuzzCase]:
        return [c for c in self.cases if c.verdict != "Match"]

    def to_json(self) -> str:
        body = {"seed": self.seed, "count": self.count, "passed": self.passed,
                "cases": [c.to_json() for c in self.cases]}
        return json.dumps(body, indent=2, sort_keys=True)


def kernel_seeds(seed: int, count: int) -> list[int]:
    rng = random.Random(seed)
    return [rng.getrandbits(31) for _ in range(count)]


def fuzz_one(index: int, kseed: int, cfg: PipelineConfig, warp_configs, mutate=None) -> FuzzCase:
    """Lower one generated kernel once and compare it at every warp configuration.

    ``mutate`` is applied to the lowered module before simulation, which is how
    hazard demonstrations inject a perturbation.
    """
    text = generate_kernel(kseed)
    names = [f"{wc}x{ws}" for wc, ws in warp_configs]
    try:
        src = parse_module(text)
        low = run_pipeline(src, cfg)
        if mutate is not None:
            mutate(low.module)
    except Exception as exc:  # reported, never raised: the report is the product
        return FuzzCase(index, kseed, names, "Error", [f"{type(exc).__name__}: {exc}"])
    for (wc, ws), name in zip(warp_configs, names):
        r = compare(src, with_warps(cfg, wc, ws), None, kseed, low)
        if not r.ok:
            return FuzzCase(index, kseed, names, r.verdict.value, [f"{name}: {x}" for x in r.report + r.violations][:8])
    return FuzzCase(index, kseed, names, "Match")


def _job(args):
    return fuzz_one(*args)


def fuzz_kernels(seed: int, count: int, cfg: PipelineConfig | None = None, warp_configs=None,
                 jobs: int = 1, mutate=None) -> FuzzReport:
    """Generate ``count`` kernels from ``seed`` and compare each one.

    With ``jobs > 1`` kernels are compared in worker processes; the report is
    still ordered by kernel index.
    """
    cfg = cfg or PipelineConfig()
    warp_configs = tuple(warp_configs or ((cfg.warp_count, cfg.warp_size),))
    work = [(i, s, cfg, warp_configs, mutate) for i, s in enumerate(kernel_seeds(seed, count))]
    if jobs > 1 and mutate is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cases = list(pool.map(_job, work, chunksize=8))
    else:
        cases = [_job(w) for w in work]
    return FuzzReport(seed, count, cases)
