from conftest import corpus_module
from hypothesis import given, settings
from hypothesis import strategies as st

from simtforge.fuzz import generate_kernel
from simtforge.parser import parse_module
from simtforge.uniformity import BranchState, D, U, format_uniformity, module_uniformity


def kernel_map(name, annotations=True):
    m = corpus_module(name)
    return module_uniformity(m, annotations).maps[m.kernel.name]


def uniform_set(m, annotations=True):
    res = module_uniformity(m, annotations)
    return {(f, v) for f, u in res.maps.items() for v in u.uniform_values()}


def test_diamond_frozen():
    u = kernel_map("diamond")
    assert u["t"] is D and u["c"] is D
    assert u["a"] is U and u["b"] is U
    # both arms carry uniform constants, but the merge sits below a divergent branch
    assert u["v"] is D
    assert u.branches["entry"] is BranchState.DIVERGENT


def test_uniform_flag_drives_branch():
    on = kernel_map("uniform_branch")
    assert on["n"] is U and on["c"] is U
    assert on.branches["entry"] is BranchState.UNIFORM
    off = kernel_map("uniform_branch", annotations=False)
    assert off["n"] is D and off["c"] is D
    assert off.branches["entry"] is BranchState.DIVERGENT


def test_assume_uniform_annotation():
    on = kernel_map("annot_loop")
    assert on["raw"] is U and on["i"] is U and on["c"] is U
    assert on.branches["head"] is BranchState.UNIFORM
    off = kernel_map("annot_loop", annotations=False)
    assert off["raw"] is D and off["c"] is D


def test_loop_with_divergent_exit_makes_counter_divergent():
    u = kernel_map("loop_break")
    assert u["i"] is D
    assert u["r2"] is U  # a constant defined in an arm stays uniform itself
    assert u["r"] is D


def test_argument_fixpoint_uniform_sites():
    res = module_uniformity(corpus_module("calls_uniform"))
    assert res.summaries["mid"].uarg == [U]
    assert res.summaries["leaf"].uarg == [U]
    assert res.summaries["leaf"].uret is U
    assert res.iterations <= 3
    assert res.maps["calls_uniform"]["c"] is U


def test_argument_fixpoint_divergent_site():
    res = module_uniformity(corpus_module("calls_tid"))
    assert res.summaries["mid"].uarg == [D]
    assert res.summaries["leaf"].uarg == [D]
    assert res.iterations <= 3


def test_argument_divergent_when_any_site_divergent():
    text = (
        "internal func @f(%x: i32) {\nentry:\n  ret %x\n}\n"
        "kernel @k(%o: addr) {\nentry:\n  %t = tid\n  %one = const 1\n"
        "  %a = call @f(%one)\n  %b = call @f(%t)\n  ret\n}\n"
    )
    res = module_uniformity(parse_module(text))
    assert res.summaries["f"].uarg == [D]


def test_call_under_divergent_control_is_divergent_site():
    text = (
        "internal func @f(%x: i32) {\nentry:\n  ret %x\n}\n"
        "kernel @k(%o: addr) {\nentry:\n  %t = tid\n  %z = const 0\n  %one = const 1\n"
        "  %c = icmp eq %t, %z\n  br %c, ^a, ^b\na:\n  %r = call @f(%one)\n  br ^b\nb:\n  ret\n}\n"
    )
    res = module_uniformity(parse_module(text))
    assert res.summaries["f"].uarg == [D]


def test_format_is_stable():
    m = corpus_module("calls_uniform")
    text = format_uniformity(m, module_uniformity(m))
    assert "  summary: uarg=[U] uptrout=[D] uret=U" in text
    assert text.splitlines()[0] == "@leaf:"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_annotations_only_add_uniformity(seed):
    m = parse_module(generate_kernel(seed))
    assert uniform_set(m, annotations=False) <= uniform_set(m, annotations=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_analysis_is_deterministic(seed):
    text = generate_kernel(seed)
    a = format_uniformity(parse_module(text), module_uniformity(parse_module(text)))
    b = format_uniformity(parse_module(text), module_uniformity(parse_module(text)))
    assert a == b
