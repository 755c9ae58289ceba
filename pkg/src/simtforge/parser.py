"""Tokenizer and recursive-descent parser for ``.vir`` text."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ir import (
    ARITY,
    BINARY_OPS,
    CSR_OPS,
    ICMP_PREDS,
    VOTE_OPS,
    Block,
    Function,
    Instr,
    Module,
    Param,
    Stage,
)

TYPES = ("i32", "i1", "addr")


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


@dataclass
class Token:
    kind: str  # val, fn, lbl, int, id, punct, eof
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|;[^\n]*)
  | (?P<val>%[A-Za-z0-9_.]+)
  | (?P<fn>@[A-Za-z0-9_.]+)
  | (?P<lbl>\^[A-Za-z0-9_.]+)
  | (?P<int>-?\d+)
  | (?P<id>\.?[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[(){}\[\],=:])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok_text = m.group()
        if kind != "ws":
            if kind in ("val", "fn", "lbl"):
                tok_text = tok_text[1:]
            toks.append(Token(kind, tok_text, line, pos - line_start + 1))
        nl = m.group().count("\n")
        if nl:
            line += nl
            line_start = pos + m.group().rfind("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers -------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError(msg, t.line, t.col)

    def next(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise self.error(f"expected {want!r}, found {t.text or t.kind!r}")
        return self.next()

    def accept(self, kind: str, text: str | None = None) -> bool:
        if self.tok.kind == kind and (text is None or self.tok.text == text):
            self.i += 1
            return True
        return False

    def value(self) -> str:
        return self.expect("val").text

    def comma(self) -> None:
        self.expect("punct", ",")

    # -- grammar -------------------------------------------------------
    def module(self) -> Module:
        m = Module()
        if self.tok.kind == "id" and self.tok.text == ".stage":
            self.next()
            st = self.expect("id")
            if st.text not in ("high", "lowered"):
                raise self.error(f"unknown stage {st.text!r}", st)
            m.stage = Stage(st.text)
        names: set[str] = set()
        while self.tok.kind != "eof":
            start = self.tok
            f = self.function()
            if f.name in names:
                raise self.error(f"duplicate function @{f.name}", start)
            names.add(f.name)
            m.functions.append(f)
        if not m.functions:
            raise self.error("empty module")
        for f in m.functions:
            for _, ins in f.instructions():
                if ins.callee is not None and ins.callee not in names:
                    raise ParseError(f"unknown function @{ins.callee}")
        return m

    def function(self) -> Function:
        t = self.expect("id")
        if t.text == "kernel":
            f = Function("", kernel=True)
        elif t.text == "func":
            f = Function("")
        elif t.text == "internal":
            self.expect("id", "func")
            f = Function("", internal=True)
        else:
            raise self.error(f"expected function, found {t.text!r}", t)
        f.name = self.expect("fn").text
        self.expect("punct", "(")
        if not self.accept("punct", ")"):
            while True:
                name = self.value()
                self.expect("punct", ":")
                ty = self.expect("id")
                if ty.text not in TYPES:
                    raise self.error(f"unknown type {ty.text!r}", ty)
                uniform = self.accept("id", "uniform")
                f.params.append(Param(name, ty.text, uniform))
                if self.accept("punct", ")"):
                    break
                self.comma()
        self.expect("punct", "{")
        labels: set[str] = set()
        while not self.accept("punct", "}"):
            lt = self.tok
            b = self.block()
            if b.label in labels:
                raise self.error(f"duplicate label {b.label!r}", lt)
            labels.add(b.label)
            f.blocks.append(b)
        if not f.blocks:
            raise self.error(f"function @{f.name} has no blocks")
        self._check_names(f, labels)
        return f

    def _check_names(self, f: Function, labels: set[str]) -> None:
        defined = {p.name for p in f.params}
        for _, ins in f.instructions():
            if ins.dest is not None:
                defined.add(ins.dest)
        for b in f.blocks:
            seen = {p.name for p in f.params}
            for other in f.blocks:
                if other is not b:
                    for ins in other.instrs():
                        if ins.dest is not None:
                            seen.add(ins.dest)
            for ins in b.phis:
                seen.add(ins.dest)
            for ins in b.phis:
                for v, lbl in ins.incoming:
                    if v not in defined:
                        raise ParseError(f"undefined value %{v} in @{f.name}", ins.line)
                    if lbl not in labels:
                        raise ParseError(f"unknown block ^{lbl} in @{f.name}", ins.line)
            for ins in list(b.body) + [b.term]:
                for v in ins.args:
                    if v not in seen:
                        raise ParseError(f"undefined value %{v} in @{f.name}^{b.label}", ins.line)
                for t in ins.targets:
                    if t not in labels:
                        raise ParseError(f"unknown block ^{t} in @{f.name}", ins.line)
                if ins.dest is not None:
                    seen.add(ins.dest)

    def block(self) -> Block:
        label = self.expect("id").text
        self.expect("punct", ":")
        b = Block(label)
        while True:
            t = self.tok
            if t.kind == "punct" and t.text == "}" or t.kind == "eof":
                raise self.error(f"block {label!r} lacks a terminator")
            if t.kind == "id" and self.peek().kind == "punct" and self.peek().text == ":":
                raise self.error(f"block {label!r} lacks a terminator")
            ins = self.instr()
            if ins.is_terminator:
                b.term = ins
                break
            if ins.op == "phi":
                if b.body:
                    raise self.error("phi after non-phi instruction", t)
                b.phis.append(ins)
            else:
                b.body.append(ins)
        nt = self.tok
        if not (nt.kind == "punct" and nt.text == "}") and not (
            nt.kind == "id" and self.peek().kind == "punct" and self.peek().text == ":"
        ):
            raise self.error("instruction after terminator")
        return b

    def instr(self) -> Instr:
        dest = None
        if self.tok.kind == "val":
            dest = self.next().text
            self.expect("punct", "=")
        t = self.expect("id")
        op = t.text
        ins = Instr(op, dest, line=t.line)
        if op == "split.neg":
            ins.op, ins.neg = "split", True
            op = "split"
        if op not in ARITY:
            raise self.error(f"unknown opcode {op!r}", t)
        needs_dest = op not in ("store", "assume_uniform", "barrier", "join", "tmc",
                                "wspawn", "br", "ret", "pred", "call")
        if needs_dest and dest is None:
            raise self.error(f"{op} requires a result", t)
        if dest is not None and op in ("store", "assume_uniform", "barrier", "join",
                                       "tmc", "wspawn", "br", "ret", "pred"):
            raise self.error(f"{op} does not produce a result", t)

        if op in BINARY_OPS or op in ("addr.add", "atomic_add", "shfl", "store"):
            ins.args = [self.value()]
            self.comma()
            ins.args.append(self.value())
        elif op == "const":
            ins.imm = [int(self.expect("int").text)]
        elif op == "icmp":
            c = self.expect("id")
            if c.text not in ICMP_PREDS:
                raise self.error(f"unknown icmp predicate {c.text!r}", c)
            ins.cond = c.text
            ins.args = [self.value()]
            self.comma()
            ins.args.append(self.value())
        elif op in ("select", "cmov"):
            ins.args = [self.value()]
            for _ in range(2):
                self.comma()
                ins.args.append(self.value())
        elif op == "phi":
            while True:
                self.expect("punct", "[")
                v = self.value()
                self.comma()
                lbl = self.expect("lbl").text
                self.expect("punct", "]")
                ins.incoming.append((v, lbl))
                if self.tok.kind == "punct" and self.tok.text == "," and self.peek().text == "[":
                    self.next()
                elif not (self.tok.kind == "punct" and self.tok.text == "["):
                    break
        elif op in CSR_OPS or op == "activemask":
            pass
        elif op in ("load", "assume_uniform", "split", "join", "tmc", "mov") or op in VOTE_OPS:
            ins.args = [self.value()]
        elif op == "call":
            ins.callee = self.expect("fn").text
            self.expect("punct", "(")
            if not self.accept("punct", ")"):
                while True:
                    ins.args.append(self.value())
                    if self.accept("punct", ")"):
                        break
                    self.comma()
        elif op == "barrier":
            ins.imm = [int(self.expect("int").text)]
            self.comma()
            ins.imm.append(int(self.expect("int").text))
        elif op == "pred":
            ins.args = [self.value()]
            self.comma()
            ins.args.append(self.value())
            self.comma()
            ins.targets = [self.expect("lbl").text]
            self.comma()
            ins.targets.append(self.expect("lbl").text)
        elif op == "wspawn":
            ins.args = [self.value()]
            self.comma()
            ins.callee = self.expect("fn").text
        elif op == "br":
            if self.tok.kind == "lbl":
                ins.targets = [self.next().text]
            else:
                ins.args = [self.value()]
                self.comma()
                ins.targets = [self.expect("lbl").text]
                self.comma()
                ins.targets.append(self.expect("lbl").text)
        elif op == "ret":
            if self.tok.kind == "val" and not (
                self.peek().kind == "punct" and self.peek().text == "="
            ):
                ins.args = [self.next().text]
        return ins


def parse_module(text: str) -> Module:
    return _Parser(text).module()
