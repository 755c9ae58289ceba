"""Deterministic text tables of the CFG analyses, sorted by block label."""

from __future__ import annotations

from .cfg import (
    build_cdg,
    build_loop_forest,
    check_reducible,
    compute_dom_tree,
    compute_postdom_tree_virtual,
)
from .ir import Module
from .uniformity import format_uniformity, function_argument_fixpoint

DUMPS = ("dom", "postdom", "loops", "cdg", "uniformity")


def _dom(f) -> list[str]:
    d = compute_dom_tree(f)
    return [f"^{b}: idom ^{d.idom[b]}" for b in sorted(d.idom)]


def _postdom(f) -> list[str]:
    pd = compute_postdom_tree_virtual(f)
    return [f"^{b}: ipdom {_lbl(pd.ipdom[b])}" for b in sorted(pd.ipdom) if not b.startswith("<")]


def _lbl(b: str) -> str:
    return b if b.startswith("<") else f"^{b}"


def _loops(f) -> list[str]:
    d = compute_dom_tree(f)
    red = check_reducible(f, d)
    out = [f"reducible: {'yes' if red else 'no'}"]
    if not red:
        return out
    lf = build_loop_forest(f, d)
    for lp in sorted(lf.loops, key=lambda x: x.header):
        body = " ".join(f"^{b}" for b in sorted(lp.body))
        latches = " ".join(f"^{b}" for b in sorted(lp.latches))
        exits = " ".join(f"^{b}" for b in sorted(lp.exits)) or "-"
        parent = f"^{lp.parent}" if lp.parent else "-"
        pre = f"^{lp.preheader}" if lp.preheader else "-"
        out.append(f"loop ^{lp.header}: depth {lf.depth(lp.header)} parent {parent} preheader {pre} "
                   f"latches {latches} exits {exits} body {body}")
    return out


def _cdg(f) -> list[str]:
    cdg = build_cdg(f, compute_postdom_tree_virtual(f))
    out = []
    for b in sorted(x.label for x in f.blocks):
        deps = " ".join(f"^{x}" for x in sorted(cdg.reverse.get(b, ())) if not x.startswith("<")) or "-"
        out.append(f"^{b}: depends on {deps}")
    return out


def dump(m: Module, what: str, annotations: bool = True) -> str:
    if what not in DUMPS:
        raise ValueError(f"unknown dump {what!r}; choose from {', '.join(DUMPS)}")
    if what == "uniformity":
        return format_uniformity(m, function_argument_fixpoint(m, annotations))
    table = {"dom": _dom, "postdom": _postdom, "loops": _loops, "cdg": _cdg}[what]
    lines = []
    for f in m.functions:
        lines.append(f"@{f.name}")
        lines.extend(f"  {row}" for row in table(f))
    return "\n".join(lines) + "\n"
