import random

import pytest
from conftest import corpus_module, graph_function, lowered_corpus, random_cfgs
from graph_oracles import (
    brute_idom,
    brute_ipdom,
    dominator_sets,
    reverse,
    t1_t2_reducible,
    with_virtual_exit,
)
from hypothesis import given, settings

from simtforge.cfg import (
    UnreachableBlocks,
    build_cdg,
    build_loop_forest,
    check_reducible,
    compute_dom_tree,
    compute_postdom_tree_virtual,
    is_canonical_loop,
)
from simtforge.corpus import entries
from simtforge.parser import parse_module


def all_fixture_functions():
    """Every function of every corpus file, before and after lowering."""
    out = []
    for e in entries():
        for f in corpus_module(e.name).functions:
            out.append((f"{e.name}:{f.name}", f))
    for name, m in lowered_corpus().items():
        for f in m.functions:
            out.append((f"{name}:{f.name}:lowered", f))
    return out


FIXTURES = all_fixture_functions()
SMALL12 = [(n, f) for n, f in FIXTURES if len(f.blocks) <= 12]
SMALL8 = [(n, f) for n, f in FIXTURES if len(f.blocks) <= 8]


def test_fixture_pool_is_not_trivial():
    assert len(SMALL12) >= 40
    assert len(SMALL8) >= 30


@pytest.mark.parametrize("name,f", SMALL12, ids=[n for n, _ in SMALL12])
def test_dominators_match_path_enumeration(name, f):
    succ = f.successors()
    assert compute_dom_tree(f).idom == brute_idom(succ, f.entry.label)


@pytest.mark.parametrize("name,f", SMALL12, ids=[n for n, _ in SMALL12])
def test_postdominators_match_path_enumeration(name, f):
    assert compute_postdom_tree_virtual(f).ipdom == brute_ipdom(f.successors())


@pytest.mark.parametrize("name,f", SMALL8, ids=[n for n, _ in SMALL8])
def test_reducibility_matches_t1_t2(name, f):
    assert bool(check_reducible(f)) == t1_t2_reducible(f.successors(), f.entry.label)


@settings(max_examples=200, deadline=None)
@given(random_cfgs(max_nodes=10))
def test_random_dominators(succ):
    f = graph_function(succ)
    assert compute_dom_tree(f).idom == brute_idom(succ, "b0")
    assert compute_postdom_tree_virtual(f).ipdom == brute_ipdom(succ)


@settings(max_examples=300, deadline=None)
@given(random_cfgs(max_nodes=8))
def test_random_reducibility(succ):
    f = graph_function(succ)
    expected = t1_t2_reducible(succ, "b0")
    assert bool(check_reducible(f)) == expected
    # the verdict does not depend on the DFS order used to find retreating edges
    rng = random.Random(len(succ))
    for _ in range(3):
        assert bool(check_reducible(f, rng=rng)) == expected


def brute_cdg(succ):
    """b depends on a when some successor of a is post-dominated by b while a is not."""
    full, root = with_virtual_exit(succ)
    pdom = dominator_sets(reverse(full), root)
    deps = {n: set() for n in succ}
    for a, ss in succ.items():
        if len(ss) < 2:
            continue
        for s in ss:
            for b in succ:
                if b in pdom.get(s, ()) and not (b != a and b in pdom[a]):
                    deps[b].add(a)
    return deps


@settings(max_examples=200, deadline=None)
@given(random_cfgs(max_nodes=9))
def test_random_control_dependence(succ):
    f = graph_function(succ)
    cdg = build_cdg(f, compute_postdom_tree_virtual(f))
    got = {b: {a for a in deps if not a.startswith("<")} for b, deps in cdg.reverse.items()}
    assert got == brute_cdg(succ)


# frozen values, computed with the path-enumeration oracle above


def test_diamond_frozen():
    f = corpus_module("diamond").kernel
    assert compute_dom_tree(f).idom == {"entry": "entry", "then": "entry", "else": "entry", "join": "entry"}
    assert compute_postdom_tree_virtual(f).ipdom == {"join": "join", "then": "join", "else": "join", "entry": "join"}
    cdg = build_cdg(f, compute_postdom_tree_virtual(f))
    assert cdg.reverse["then"] == {"entry"} and cdg.reverse["join"] == set()


def test_loop_break_frozen():
    f = corpus_module("loop_break").kernel
    d = compute_dom_tree(f)
    assert d.idom["found"] == "body" and d.idom["done"] == "head"
    (lp,) = build_loop_forest(f, d).loops
    assert lp.header == "head"
    assert set(lp.body) == {"head", "body", "latch"}
    assert set(lp.exits) == {"found", "miss"}
    assert lp.preheader == "entry"


def test_nested_loops_forest():
    f = corpus_module("nested_loops").kernel
    lf = build_loop_forest(f, compute_dom_tree(f))
    inner = lf.by_header()["inner"]
    assert inner.parent == "outer"
    assert lf.depth("inner.body") == 2 and lf.depth("outer.next") == 1 and lf.depth("done") == 0


def test_irreducible_witness():
    f = corpus_module("irreducible2").kernel
    red = check_reducible(f)
    assert not red
    assert len(red.witness) == 1 and set(red.witness[0]) == {"a", "b"}


@pytest.mark.parametrize("name", sorted(lowered_corpus()))
def test_lowered_loops_are_canonical(name):
    for f in lowered_corpus()[name].functions:
        d = compute_dom_tree(f)
        assert check_reducible(f, d)
        for lp in build_loop_forest(f, d).loops:
            assert is_canonical_loop(f, lp), (f.name, lp.header)


def test_unreachable_blocks_rejected():
    m = parse_module("kernel @k() {\nentry:\n  ret\ndead:\n  ret\n}\n")
    with pytest.raises(UnreachableBlocks):
        compute_dom_tree(m.kernel)
