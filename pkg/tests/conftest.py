from __future__ import annotations

from functools import cache

import pytest
from hypothesis import strategies as st

from simtforge.corpus import entries, load_kernel
from simtforge.ir import Module
from simtforge.normalize import PipelineConfig
from simtforge.parser import parse_module
from simtforge.pipeline import run_pipeline


@cache
def corpus_module(name: str) -> Module:
    return load_kernel(name)


def fresh(name: str) -> Module:
    """A private copy of a corpus kernel that a test may mutate."""
    return load_kernel(name)


def small_cfg(**kw) -> PipelineConfig:
    kw.setdefault("warp_count", 1)
    kw.setdefault("warp_size", 4)
    return PipelineConfig(**kw)


@cache
def lowered_corpus() -> dict[str, Module]:
    out = {}
    for e in entries():
        if e.skip or e.launch != "kernel":
            continue
        out[e.name] = run_pipeline(load_kernel(e.name), PipelineConfig()).module
    return out


def graph_text(succ: dict[str, list[str]], entry: str = "b0", name: str = "g") -> str:
    """A High kernel whose CFG is exactly ``succ``; every branch reads one condition."""
    order = [entry] + sorted(n for n in succ if n != entry)
    lines = [f"kernel @{name}(%out: addr) {{"]
    for n in order:
        lines.append(f"{n}:")
        if n == entry:
            lines += ["  %t = tid", "  %z = const 0", "  %c = icmp eq %t, %z"]
        ss = succ[n]
        if not ss:
            lines.append("  ret")
        elif len(ss) == 1:
            lines.append(f"  br ^{ss[0]}")
        else:
            lines.append(f"  br %c, ^{ss[0]}, ^{ss[1]}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_function(succ: dict[str, list[str]], entry: str = "b0"):
    return parse_module(graph_text(succ, entry)).kernel


def _reachable(succ, entry):
    seen, stack = {entry}, [entry]
    while stack:
        for s in succ[stack.pop()]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


@st.composite
def random_cfgs(draw, max_nodes: int = 10):
    """Random CFGs in which every block reaches some exit.

    Each block gets an optional forward edge (none makes it an exit) and an
    optional second edge to any block, which may point backwards.
    """
    n = draw(st.integers(2, max_nodes))
    names = [f"b{i}" for i in range(n)]
    succ: dict[str, list[str]] = {}
    for i, name in enumerate(names):
        ss: list[str] = []
        if i < n - 1 and draw(st.integers(0, 5)) > 0:
            ss.append(names[draw(st.integers(i + 1, n - 1))])
        if ss and draw(st.booleans()):
            other = names[draw(st.integers(0, n - 1))]
            if other not in ss and other != names[0]:
                ss.append(other)
        succ[name] = ss
    live = _reachable(succ, names[0])
    return {k: v for k, v in succ.items() if k in live}


@pytest.fixture
def cfg4() -> PipelineConfig:
    return small_cfg()
