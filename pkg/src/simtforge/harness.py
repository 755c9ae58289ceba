"""Differential comparison: lowered module on the simulator versus the oracle."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum

from .ir import Module
from .launch import plan_launch
from .normalize import PipelineConfig
from .oracle import OracleError, OracleExcluded, diff_outcomes, run_oracle
from .pipeline import PipelineResult, run_pipeline
from .sim import MetricsReport, SimError, UniformityViolation, run_simt

# the warp configurations of the differential test, as (warp_count, warp_size)
WARP_CONFIGS = ((1, 4), (4, 8), (16, 32))


class Verdict(str, Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"
    EXCLUDED = "Excluded"
    ERROR = "Error"


@dataclass
class CompareResult:
    verdict: Verdict
    report: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    uniformity_violation: str | None = None
    metrics: MetricsReport | None = None
    oracle_metrics: dict | None = None

    @property
    def ok(self) -> bool:
        return self.verdict is Verdict.MATCH

    def to_json(self) -> dict:
        out = {"verdict": self.verdict.value, "report": self.report, "violations": self.violations}
        if self.uniformity_violation:
            out["uniformity_violation"] = self.uniformity_violation
        if self.metrics is not None:
            out["simulator"] = json.loads(self.metrics.to_json())
        if self.oracle_metrics is not None:
            out["oracle"] = self.oracle_metrics
        return out


def with_warps(cfg: PipelineConfig, warp_count: int, warp_size: int) -> PipelineConfig:
    return dataclasses.replace(cfg, warp_count=warp_count, warp_size=warp_size)


def compare(source: Module, cfg: PipelineConfig, overrides: dict[str, int] | None = None,
            seed: int = 0, lowered: PipelineResult | Module | None = None,
            uniform: dict[str, set[str]] | None = None) -> CompareResult:
    """Run ``source`` on the oracle and its lowering on the simulator, then diff.

    ``lowered`` may be a pipeline result or an already Lowered module (for
    example a perturbed one); by default ``source`` is lowered with ``cfg``.
    """
    plan = plan_launch(source.kernel, cfg, overrides, seed)
    try:
        ref = run_oracle(source, plan.cfg, plan.args, plan.mem_init)
    except OracleExcluded as exc:
        return CompareResult(Verdict.EXCLUDED, [str(exc)])
    except OracleError as exc:
        return CompareResult(Verdict.ERROR, [f"oracle: {exc}"])
    if lowered is None:
        lowered = run_pipeline(source, cfg)
    if isinstance(lowered, PipelineResult):
        uniform = lowered.uniform if uniform is None else uniform
        lowered = lowered.module
    om = ref.metrics()
    try:
        got = run_simt(lowered, plan.cfg, plan.args, plan.mem_init, uniform=uniform)
    except UniformityViolation as exc:
        return CompareResult(Verdict.MISMATCH, [str(exc)], uniformity_violation=str(exc), oracle_metrics=om)
    except SimError as exc:
        return CompareResult(Verdict.MISMATCH, [f"simulator: {exc}"], oracle_metrics=om)
    diff = diff_outcomes(ref, got)
    ok = diff.match and not got.violations
    return CompareResult(Verdict.MATCH if ok else Verdict.MISMATCH, diff.report,
                         list(got.violations), metrics=got.metrics, oracle_metrics=om)
