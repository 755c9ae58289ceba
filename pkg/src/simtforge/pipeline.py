"""Pass driver: High module in, Lowered module plus a pass log out."""

from __future__ import annotations

from dataclasses import dataclass, field

from .cfg import build_loop_forest, compute_dom_tree, compute_postdom_tree
from .diverge import (
    canonicalize_regions,
    classify_branches,
    demote_phis,
    transform_branch,
    transform_loop,
)
from .ir import Module, Stage
from .late import repair_divergence
from .normalize import (
    PipelineConfig,
    StructurizeError,
    canonicalize_loops,
    normalize_selects,
    simplify_cfg,
    structurize_count,
)
from .reconstruct import reconstruct_cfg
from .uniformity import State, analyze_function, function_argument_fixpoint
from .verify import verify_module

PASSES = ("simplify", "selects", "loops", "structurize", "recon", "diverge", "demote", "repair")
STOP_NAMES = ("selects", "simplify", "loops", "structurize", "recon", "diverge", "demote")


class PassError(Exception):
    def __init__(self, pass_name: str, msg: str):
        super().__init__(f"{pass_name}: {msg}")
        self.pass_name = pass_name


@dataclass
class PassRecord:
    name: str
    blocks: int
    instrs: int
    splits: int
    joins: int
    preds: int
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"pass": self.name, "blocks": self.blocks, "instrs": self.instrs,
                "splits": self.splits, "joins": self.joins, "preds": self.preds, **self.detail}


@dataclass
class PipelineResult:
    module: Module
    log: list[PassRecord]
    uniform: dict[str, set[str]] = field(default_factory=dict)
    divergent: dict[str, set[str]] = field(default_factory=dict)
    clones: int = 0
    recon_copies: int = 0


def static_counts(m: Module) -> dict[str, int]:
    c = {"blocks": 0, "instrs": 0, "splits": 0, "joins": 0, "preds": 0}
    for f in m.functions:
        c["blocks"] += len(f.blocks)
        for _, ins in f.instructions():
            c["instrs"] += 1
            if ins.op == "split":
                c["splits"] += 1
            elif ins.op == "join":
                c["joins"] += 1
            elif ins.op == "pred":
                c["preds"] += 1
    return c


def _record(log, name, m, **detail):
    log.append(PassRecord(name, **static_counts(m), detail=detail))


def _check(name: str, m: Module) -> None:
    bad = verify_module(m)
    if bad:
        raise PassError(name, "; ".join(str(v) for v in bad[:5]))


def run_pipeline(m: Module, cfg: PipelineConfig | None = None, stop_after: str | None = None) -> PipelineResult:
    """Lower a verified High module.  The input module is not modified."""
    cfg = cfg or PipelineConfig()
    if stop_after is not None and stop_after not in STOP_NAMES:
        raise ValueError(f"unknown pass {stop_after!r}; choose from {', '.join(STOP_NAMES)}")
    m = m.clone()
    log: list[PassRecord] = []
    res = PipelineResult(m, log)
    _record(log, "input", m)

    stage = "simplify"

    def done(name):
        _check(name, m)
        return stop_after == name

    try:
        for f in m.functions:
            simplify_cfg(f)
        _record(log, "simplify", m)
        if done("simplify"):
            return res
        stage = "selects"
        for f in m.functions:
            normalize_selects(f, None, cfg)
            simplify_cfg(f)
        _record(log, "selects", m)
        if done("selects"):
            return res
        stage = "loops"
        for f in m.functions:
            canonicalize_loops(f)
        _record(log, "loops", m)
        if done("loops"):
            return res
        stage = "structurize"
        for f in m.functions:
            res.clones += structurize_count(f)
        _record(log, "structurize", m, cloned=res.clones)
        if done("structurize"):
            return res
        stage = "recon"
        summaries = function_argument_fixpoint(m, cfg.annotations).summaries
        if cfg.recon:
            for f in m.functions:
                res.recon_copies += reconstruct_cfg(f, summaries, cfg.annotations)
        _record(log, "recon", m, duplicated=res.recon_copies)
        if done("recon"):
            return res
        stage = "diverge"
        states = {}
        for f in m.functions:
            canonicalize_regions(f, summaries, cfg.annotations)
            u = analyze_function(f, summaries, cfg.annotations)
            pd = compute_postdom_tree(f)
            lf = build_loop_forest(f, compute_dom_tree(f))
            plan = classify_branches(f, u, pd, lf)
            transform_loop(f, plan, lf)
            transform_branch(f, plan)
            states[f.name] = dict(u.values)
        _record(log, "diverge", m)
        if stop_after == "diverge":
            _check("diverge", _lowered_view(m))
            return res
        stage = "demote"
        for f in m.functions:
            made = demote_phis(f, cfg)
            st = states[f.name]
            for tmp, phi in made.items():
                st[tmp] = st.get(phi, State.DIVERGENT)
            for _, ins in f.instructions():
                if ins.dest is not None and ins.dest not in st:
                    # tokens and masks are warp-wide values
                    st[ins.dest] = State.UNIFORM if ins.op in ("split", "activemask", "const") else State.DIVERGENT
            res.uniform[f.name] = {v for v, s in st.items() if s is State.UNIFORM}
            res.divergent[f.name] = {v for v, s in st.items() if s is State.DIVERGENT}
        m.stage = Stage.LOWERED
        _record(log, "demote", m)
        if done("demote"):
            return res
        if cfg.repair:
            stage = "repair"
            for f in m.functions:
                repair_divergence(f, res.divergent[f.name], res.uniform[f.name])
            _record(log, "repair", m)
            _check("repair", m)
        return res
    except (PassError, StructurizeError):
        raise
    except Exception as exc:  # surface which pass failed
        raise PassError(stage, f"{type(exc).__name__}: {exc}") from exc


def _lowered_view(m: Module) -> Module:
    """Mid-lowering modules mix phis with split/join; verify them without the stage rule."""
    view = m.clone()
    view.stage = Stage.HIGH
    for f in view.functions:
        for b in f.blocks:
            b.body = [i for i in b.body if i.op not in ("split", "join", "activemask", "tmc")]
            if b.term.op == "pred":
                b.term.op = "br"
                b.term.args = b.term.args[:1]
    return view
