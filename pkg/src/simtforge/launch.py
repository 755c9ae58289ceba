"""Kernel launch conventions shared by the simulator, the oracle and the CLI.

Every ``addr`` parameter gets its own buffer of ``4*T + 64`` words, where ``T``
is the total thread count, laid out back to back from address 0.  Buffers are
filled from a seeded generator with small values so that loads used as trip
counts stay short.  ``i32`` parameters default to 7.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .ir import Function
from .normalize import PipelineConfig

I32_DEFAULT = 7
INIT_RANGE = 32


def buffer_words(cfg: PipelineConfig) -> int:
    return 4 * cfg.warp_size * cfg.warp_count + 64


@dataclass
class LaunchPlan:
    args: dict[str, int]
    mem_init: np.ndarray
    buffers: dict[str, tuple[int, int]]
    cfg: PipelineConfig


def plan_launch(fn: Function, cfg: PipelineConfig, overrides: dict[str, int] | None = None,
                seed: int = 0, sizes: dict[str, int] | None = None,
                inits: dict[str, list[int]] | None = None) -> LaunchPlan:
    """Arguments and initial memory for launching kernel ``fn`` under ``cfg``.

    ``overrides`` replaces default ``i32`` arguments by name, ``sizes`` the
    default buffer length and ``inits`` the seeded contents of a buffer (a
    shorter list leaves the tail seeded).  The returned config is ``cfg`` with
    ``mem_words`` sized to hold every buffer.
    """
    overrides = dict(overrides or {})
    sizes, inits = dict(sizes or {}), dict(inits or {})
    args: dict[str, int] = {}
    buffers: dict[str, tuple[int, int]] = {}
    base = 0
    for p in fn.params:
        if p.type == "addr":
            size = int(sizes.pop(p.name, buffer_words(cfg)))
            buffers[p.name] = (base, size)
            args[p.name] = base
            base += size
        else:
            args[p.name] = int(overrides.pop(p.name, I32_DEFAULT))
    unknown = set(overrides) | set(sizes) | (set(inits) - set(buffers))
    if unknown:
        raise ValueError(f"unknown argument(s) for @{fn.name}: {', '.join(sorted(unknown))}")
    words = max(base, 64)
    rng = np.random.default_rng(seed)
    init = rng.integers(0, INIT_RANGE, size=words, dtype=np.uint32)
    for name, values in inits.items():
        start, size = buffers[name]
        vals = np.asarray(values[:size], dtype=np.int64) & 0xFFFFFFFF
        init[start:start + len(vals)] = vals.astype(np.uint32)
    return LaunchPlan(args, init, buffers, dataclasses.replace(cfg, mem_words=words))
