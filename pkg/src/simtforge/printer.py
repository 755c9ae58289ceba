"""Canonical text form of a module."""

from __future__ import annotations

from .ir import Block, Function, Instr, Module, Stage


def format_instr(ins: Instr) -> str:
    op = ins.op
    lhs = f"%{ins.dest} = " if ins.dest is not None else ""
    vals = ", ".join(f"%{a}" for a in ins.args)
    if op == "phi":
        arms = ", ".join(f"[%{v}, ^{b}]" for v, b in ins.incoming)
        return f"{lhs}phi {arms}"
    if op == "const":
        return f"{lhs}const {ins.imm[0]}"
    if op == "icmp":
        return f"{lhs}icmp {ins.cond} {vals}"
    if op == "split":
        return f"{lhs}{'split.neg' if ins.neg else 'split'} {vals}"
    if op == "call":
        return f"{lhs}call @{ins.callee}({vals})"
    if op == "barrier":
        return f"barrier {ins.imm[0]}, {ins.imm[1]}"
    if op == "wspawn":
        return f"wspawn {vals}, @{ins.callee}"
    if op == "br":
        if ins.args:
            return f"br %{ins.args[0]}, ^{ins.targets[0]}, ^{ins.targets[1]}"
        return f"br ^{ins.targets[0]}"
    if op == "pred":
        return f"pred {vals}, ^{ins.targets[0]}, ^{ins.targets[1]}"
    if not ins.args:
        return f"{lhs}{op}"
    return f"{lhs}{op} {vals}"


def format_block(b: Block) -> list[str]:
    lines = [f"{b.label}:"]
    lines.extend(f"  {format_instr(i)}" for i in b.instrs())
    return lines


def format_function(f: Function) -> str:
    if f.kernel:
        kw = "kernel"
    elif f.internal:
        kw = "internal func"
    else:
        kw = "func"
    params = ", ".join(
        f"%{p.name}: {p.type}" + (" uniform" if p.uniform else "") for p in f.params
    )
    lines = [f"{kw} @{f.name}({params}) {{"]
    for b in f.blocks:
        lines.extend(format_block(b))
    lines.append("}")
    return "\n".join(lines) + "\n"


def print_module(m: Module) -> str:
    parts = []
    if m.stage is Stage.LOWERED:
        parts.append(".stage lowered\n")
    parts.extend(format_function(f) for f in m.functions)
    return "\n".join(parts)
