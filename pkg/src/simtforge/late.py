"""Late-phase hazards on Lowered code and the repair pass that undoes them.

The perturbations recreate, as IR rewrites, what late back-end passes can do
to a split and its branch: invert the branch, branch on a reloaded copy of the
predicate, or expand a conditional move into an unguarded branch.
"""

from __future__ import annotations

import random
from enum import Enum

from .cfg import compute_postdom_tree
from .ir import Block, Function, Instr, Module
from .verify import is_negation_of

DIVERGENT_SOURCES = ("tid", "load", "atomic_add", "shfl", "call")
# results that are warp-wide whatever their operands are
WARP_WIDE = ("const", "ntid", "wid", "nwid", "coreid", "activemask", "split",
             "vote.all", "vote.any", "vote.ballot")


class Mode(str, Enum):
    INVERT = "invert"
    REMAT = "remat"
    SELECT = "select"


class NoApplicableSite(Exception):
    pass


# ---------------------------------------------------------------------------
# perturbations


def _sites(f: Function, mode: Mode) -> list:
    out = []
    for b in f.blocks:
        if mode is Mode.INVERT and b.term.is_cond_branch or mode is Mode.REMAT and b.term.is_cond_branch and b.body and b.body[-1].op == "split" \
                and b.body[-1].args[0] == b.term.args[0]:
            out.append(b.label)
        elif mode is Mode.SELECT:
            out.extend((b.label, i) for i, ins in enumerate(b.body) if ins.op == "cmov")
    return out


def perturb(f: Function, mode: Mode | str, seed: int) -> str:
    """Apply one seeded hazard to ``f``; returns a short description of the site."""
    mode = Mode(mode)
    sites = _sites(f, mode)
    if not sites:
        raise NoApplicableSite(f"@{f.name}: no site for {mode.value}")
    site = random.Random(seed).choice(sites)
    if mode is Mode.INVERT:
        b = f.block(site)
        c = b.term.args[0]
        one, nc = f.fresh_value("one"), f.fresh_value(f"{c}.not")
        at = len(b.body) - (1 if b.body and b.body[-1].op == "split" else 0)
        b.body[at:at] = [Instr("const", one, imm=[1]), Instr("xor", nc, args=[c, one])]
        b.term.args = [nc]
        b.term.targets = b.term.targets[::-1]
        return f"@{f.name}^{site}: inverted branch on %{c}"
    if mode is Mode.REMAT:
        b = f.block(site)
        c = b.term.args[0]
        copy = f.fresh_value(f"{c}.reload")
        b.body.append(Instr("mov", copy, args=[c]))
        b.term.args = [copy]
        return f"@{f.name}^{site}: branch reads reloaded %{copy}"
    label, i = site
    _expand_cmov(f, f.block(label), i)
    return f"@{f.name}^{label}: expanded cmov into a branch"


def _expand_cmov(f: Function, b: Block, i: int) -> None:
    ins = b.body[i]
    c, x, y = ins.args
    t_l = f.fresh_label(f"{b.label}.t")
    e_l = f.fresh_label(f"{b.label}.f")
    j_l = f.fresh_label(f"{b.label}.m")
    join = Block(j_l, body=b.body[i + 1:], term=b.term)
    b.body = b.body[:i]
    b.term = Instr("br", args=[c], targets=[t_l, e_l])
    f.insert_block_after(b.label, Block(t_l, body=[Instr("mov", ins.dest, args=[x])],
                                        term=Instr("br", targets=[j_l])))
    f.insert_block_after(t_l, Block(e_l, body=[Instr("mov", ins.dest, args=[y])],
                                    term=Instr("br", targets=[j_l])))
    f.insert_block_after(e_l, join)


def perturb_module(m: Module, mode: Mode | str, seed: int) -> str:
    """Pick the function to perturb by seed among those with a site."""
    mode = Mode(mode)
    cands = [f for f in m.functions if _sites(f, mode)]
    if not cands:
        raise NoApplicableSite(f"no site for {mode.value}")
    rng = random.Random(seed)
    f = rng.choice(cands)
    return perturb(f, mode, rng.randrange(1 << 30))


# ---------------------------------------------------------------------------
# repair


def infer_divergent(f: Function, known: set[str] | None = None,
                    uniform: set[str] | None = None) -> set[str]:
    """Divergent names of a Lowered function by the data rule, seeded with ``known``.

    Names in ``uniform`` were proven uniform by the analysis (annotations and
    call summaries included) and are never demoted here.
    """
    div = set(known or ())
    keep = set(uniform or ()) - div
    changed = True
    while changed:
        changed = False
        for _, ins in f.instructions():
            d = ins.dest
            if d is None or d in div or d in keep or ins.op in WARP_WIDE:
                continue
            if ins.op in DIVERGENT_SOURCES or any(a in div for a in ins.args):
                div.add(d)
                changed = True
    return div


def _single_defs(f: Function) -> dict[str, Instr]:
    seen: dict[str, Instr] = {}
    multi: set[str] = set()
    for _, ins in f.instructions():
        if ins.dest is None:
            continue
        if ins.dest in seen:
            multi.add(ins.dest)
        seen[ins.dest] = ins
    return {k: v for k, v in seen.items() if k not in multi}


def resolve(defs: dict[str, Instr], v: str) -> tuple[str, int]:
    """Follow ``mov`` and ``xor`` with 0 or 1 back to a root; returns (root, parity)."""
    parity = 0
    for _ in range(64):
        d = defs.get(v)
        if d is None:
            break
        if d.op == "mov":
            v = d.args[0]
            continue
        if d.op == "xor":
            a, b = d.args
            for x, k in ((a, b), (b, a)):
                kd = defs.get(k)
                if kd is not None and kd.op == "const" and kd.imm[0] in (0, 1):
                    parity ^= kd.imm[0]
                    v = x
                    break
            else:
                break
            continue
        break
    return v, parity


def repair_divergence(f: Function, divergent: set[str] | None = None,
                      uniform: set[str] | None = None) -> list[str]:
    """Restore split/branch pairing; returns one line per fix (empty when nothing to do)."""
    fixes: list[str] = []
    defs = _single_defs(f)
    for b in f.blocks:
        if not b.term.is_cond_branch:
            continue
        idx = next((i for i in range(len(b.body) - 1, -1, -1) if b.body[i].op == "split"), None)
        if idx is None:
            continue
        if any(ins.op in ("join", "split") for ins in b.body[idx + 1:]):
            continue
        split = b.body[idx]
        c, bc = split.args[0], b.term.args[0]
        (rc, pc), (rb, pb) = resolve(defs, c), resolve(defs, bc)
        if rc != rb:
            continue  # unprovable; the verifier keeps reporting it
        want_neg = bool(pc ^ pb)
        if idx != len(b.body) - 1:
            b.body.append(b.body.pop(idx))
            fixes.append(f"^{b.label}: moved split next to its branch")
        if not want_neg:
            if split.neg or bc != c:
                fixes.append(f"^{b.label}: branch reads split operand %{c}")
            split.neg = False
            b.term.args = [c]
            continue
        exact = is_negation_of(defs, bc, c)
        if not exact:
            one, nc = f.fresh_value("one"), f.fresh_value(f"{c}.not")
            b.body[-1:-1] = [Instr("const", one, imm=[1]), Instr("xor", nc, args=[c, one])]
            b.term.args = [nc]
            defs = _single_defs(f)
        if not split.neg:
            fixes.append(f"^{b.label}: set negate flag on split %{split.dest}")
        split.neg = True

    div = infer_divergent(f, divergent, uniform)
    unguarded = [b.label for b in f.blocks
                 if b.term.is_cond_branch and b.term.args[0] in div
                 and not (b.body and b.body[-1].op == "split")]
    if unguarded:
        pd = compute_postdom_tree(f)
        for label in unguarded:
            b = f.block(label)
            tok = f.fresh_value(f"{label}.tok")
            b.body.append(Instr("split", tok, args=[b.term.args[0]]))
            ip = f.block(pd.ipdom[label])
            # the new branch sits inside any region already joining here
            ip.body.insert(0, Instr("join", args=[tok]))
            fixes.append(f"^{label}: synthesized split/join (join in ^{ip.label})")
    return fixes
