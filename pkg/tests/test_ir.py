import pytest
from conftest import corpus_module, graph_text, lowered_corpus, random_cfgs
from hypothesis import given, settings
from hypothesis import strategies as st

from simtforge.corpus import entries, load_text
from simtforge.fuzz import generate_kernel
from simtforge.ir import Stage
from simtforge.parser import ParseError, parse_module
from simtforge.printer import print_module
from simtforge.verify import verify_module

CORPUS = [e.name for e in entries()]


def round_trip(text: str) -> str:
    once = print_module(parse_module(text))
    twice = print_module(parse_module(once))
    assert once == twice
    return once


@pytest.mark.parametrize("name", CORPUS)
def test_corpus_round_trip(name):
    round_trip(load_text(name))


@pytest.mark.parametrize("name", sorted(lowered_corpus()))
def test_lowered_round_trip_and_verify(name):
    m = lowered_corpus()[name]
    assert m.stage is Stage.LOWERED
    text = round_trip(print_module(m))
    assert verify_module(parse_module(text)) == []


@pytest.mark.parametrize("name", [n for n in CORPUS if n not in ("bad_annot",)])
def test_corpus_verifies(name):
    assert verify_module(corpus_module(name)) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fuzzed_kernels_round_trip(seed):
    text = generate_kernel(seed)
    m = parse_module(text)
    assert verify_module(m) == []
    round_trip(text)


@settings(max_examples=100, deadline=None)
@given(random_cfgs())
def test_random_graphs_round_trip(succ):
    round_trip(graph_text(succ))


def test_comments_and_blank_lines_ignored():
    text = "; header\n\nkernel @k(%o: addr) {\nentry: ; the entry\n  %t = tid\n\n  ret\n}\n"
    assert print_module(parse_module(text)) == print_module(parse_module(text.replace("; the entry", "")))


@pytest.mark.parametrize("text,line", [
    ("kernel @k() {\nentry:\n  %x = bogus 1\n  ret\n}\n", 3),
    ("kernel @k() {\nentry:\n  %x = add %a\n  ret\n}\n", 4),
    ("kernel @k() {\nentry:\n  ret\n", 4),
    ("kernel @k(%x: float) {\nentry:\n  ret\n}\n", 1),
])
def test_parse_errors_carry_positions(text, line):
    with pytest.raises(ParseError) as exc:
        parse_module(text)
    assert exc.value.line == line


def kinds(text):
    return {v.kind for v in verify_module(parse_module(text))}


def test_verifier_catches_use_not_dominated():
    text = ("kernel @k(%o: addr) {\nentry:\n  %t = tid\n  %z = const 0\n  %c = icmp eq %t, %z\n"
            "  br %c, ^a, ^b\na:\n  %x = tid\n  br ^j\nb:\n  %y = add %x, %x\n  br ^j\nj:\n  ret\n}\n")
    assert "UseNotDominated" in kinds(text)


def test_parser_rejects_undefined_value():
    with pytest.raises(ParseError, match="undefined value %q"):
        parse_module("kernel @k(%o: addr) {\nentry:\n  %y = add %q, %q\n  ret\n}\n")


def test_parser_rejects_unknown_label():
    with pytest.raises(ParseError):
        parse_module("kernel @k(%o: addr) {\nentry:\n  br ^nowhere\n}\n")


def test_verifier_catches_phi_edge_mismatch():
    text = ("kernel @k(%o: addr) {\nentry:\n  %t = tid\n  br ^b\n"
            "b:\n  %p = phi [%t, ^entry], [%t, ^b]\n  ret\n}\n")
    assert "PhiEdgeMismatch" in kinds(text)


def test_verifier_catches_stage_violation():
    text = "kernel @k(%o: addr) {\nentry:\n  %m = activemask\n  ret\n}\n"
    assert "StageViolation" in kinds(text)


def test_verifier_catches_type_mismatch():
    text = "kernel @k(%o: addr) {\nentry:\n  %t = tid\n  %y = load %t\n  ret\n}\n"
    assert "TypeMismatch" in kinds(text)


def test_verifier_catches_recursion():
    text = ("internal func @f(%x: i32) {\nentry:\n  %y = call @f(%x)\n  ret %y\n}\n"
            "kernel @k(%o: addr) {\nentry:\n  %t = tid\n  %r = call @f(%t)\n  ret\n}\n")
    assert "Recursion" in kinds(text)
