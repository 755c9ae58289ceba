import pytest
from conftest import fresh, graph_function, lowered_corpus, random_cfgs
from hypothesis import given, settings

from simtforge.cfg import (
    build_loop_forest,
    check_reducible,
    compute_dom_tree,
    is_canonical_loop,
)
from simtforge.corpus import entry, fixture, hazard_fixtures
from simtforge.diverge import check_nesting
from simtforge.ir import Module, Stage
from simtforge.late import (
    Mode,
    NoApplicableSite,
    perturb,
    perturb_module,
    repair_divergence,
)
from simtforge.normalize import (
    CLONE_BUDGET,
    PipelineConfig,
    StructurizeError,
    merge_returns,
    structurize,
    structurize_count,
)
from simtforge.pipeline import STOP_NAMES, PassError, run_pipeline, static_counts
from simtforge.printer import print_module
from simtforge.verify import split_discipline, verify_module


def lower(name, **kw):
    return run_pipeline(fresh(name), PipelineConfig(**kw))


def counts(res):
    c = static_counts(res.module)
    return c["splits"], c["joins"], c["preds"]


# frozen (splits, joins, preds) after the default pipeline; each was checked by
# hand against the CFG: one split/join per divergent branch, one pred per
# divergent loop
FROZEN = {
    "diamond": (1, 1, 0),
    "uniform_branch": (0, 0, 0),
    "while_tid": (1, 1, 1),
    "loop_break": (3, 3, 1),
    "nested_if": (2, 2, 0),
    "cfd_recon": (3, 3, 0),
    "irreducible2": (5, 5, 1),
    "ternary": (1, 1, 0),
    "annot_loop": (0, 0, 0),
    "calls_uniform": (0, 0, 0),
    "early_return": (1, 1, 0),
}


@pytest.mark.parametrize("name,expected", sorted(FROZEN.items()))
def test_frozen_marker_counts(name, expected):
    assert counts(lower(name)) == expected


@pytest.mark.parametrize("name", sorted(lowered_corpus()))
def test_lowered_structure(name):
    m = lowered_corpus()[name]
    assert m.stage is Stage.LOWERED
    assert verify_module(m) == []
    for f in m.functions:
        assert len(f.exit_blocks()) == 1
        assert not any(ins.op in ("phi", "select") for _, ins in f.instructions())
        d = compute_dom_tree(f)
        assert check_reducible(f, d)
        assert all(is_canonical_loop(f, lp) for lp in build_loop_forest(f, d).loops)
        assert check_nesting(f) == []
        assert split_discipline(f) == []


def test_input_module_untouched():
    m = fresh("diamond")
    before = print_module(m)
    run_pipeline(m)
    assert print_module(m) == before


def test_stop_after_each_pass():
    for name in STOP_NAMES:
        res = run_pipeline(fresh("loop_break"), stop_after=name)
        assert res.log[-1].name == name
    with pytest.raises(ValueError):
        run_pipeline(fresh("diamond"), stop_after="nope")


# structurization


def test_irreducible_fixture_single_clone():
    name = fixture("irreducible")
    res = lower(name)
    assert res.clones == 1 == entry(name).expect["clones"]
    f = fresh(name).kernel
    assert not check_reducible(f)
    assert structurize_count(f) == 1
    assert check_reducible(f)


def test_adversarial_fixture_exhausts_budget():
    f = fresh(fixture("adversarial")).kernel
    with pytest.raises(StructurizeError):
        structurize(f)
    with pytest.raises(StructurizeError):
        run_pipeline(fresh(fixture("adversarial")))


def test_budget_is_a_parameter():
    f = fresh(fixture("irreducible")).kernel
    with pytest.raises(StructurizeError):
        structurize(f, budget=0)
    assert CLONE_BUDGET == 64


def test_merge_returns_single_exit():
    f = fresh("early_return").kernel
    assert len(f.exit_blocks()) >= 2
    merge_returns(f)
    assert len(f.exit_blocks()) == 1


@settings(max_examples=150, deadline=None)
@given(random_cfgs(max_nodes=8))
def test_structurize_random_graphs(succ):
    f = graph_function(succ)
    try:
        n = structurize_count(f)
    except StructurizeError:
        return
    assert 0 <= n <= CLONE_BUDGET
    assert check_reducible(f)


@settings(max_examples=80, deadline=None)
@given(random_cfgs(max_nodes=7))
def test_pipeline_random_graphs(succ):
    """Every branch is divergent here; lowering must still give a well-formed result."""
    m = Module([graph_function(succ)])
    try:
        res = run_pipeline(m, PipelineConfig())
    except StructurizeError:
        return
    except PassError as exc:
        pytest.fail(str(exc))
    for f in res.module.functions:
        assert verify_module(res.module) == []
        assert len(f.exit_blocks()) == 1
        assert check_reducible(f)
        assert check_nesting(f) == []


# selects and reconstruction


def test_select_lowering_depends_on_zicond():
    plain, zic = lower("ternary"), lower("ternary", zicond=True)
    ops = lambda r: [i.op for _, i in r.module.kernel.instructions()]
    assert "cmov" in ops(zic) and "split" not in ops(zic)
    assert "cmov" not in ops(plain) and "split" in ops(plain)
    assert len(zic.module.kernel.blocks) == 1


def test_reconstruction_duplicates_shared_leaf():
    name = fixture("recon")
    on, off = lower(name), lower(name, recon=False)
    assert on.recon_copies == entry(name).expect["recon_copies"] == 1
    assert off.recon_copies == 0
    assert counts(on)[0] < counts(off)[0]


def test_annotations_remove_markers():
    name = fixture("annotated_loop")
    assert counts(lower(name)) == (0, 0, 0)
    assert counts(lower(name, annotations=False)) == (2, 2, 1)


# late-phase hazards


def lowered_for(mode):
    spec = hazard_fixtures()[mode]
    return run_pipeline(fresh(spec["kernel"]), PipelineConfig(zicond=spec["zicond"], repair=False))


@pytest.mark.parametrize("mode", ["invert", "remat"])
def test_structural_hazards_are_flagged_and_repaired(mode):
    res = lowered_for(mode)
    f = res.module.kernel
    perturb(f, mode, 0)
    assert split_discipline(f) != []
    fixes = repair_divergence(f, res.divergent[f.name], res.uniform[f.name])
    assert fixes
    assert verify_module(res.module) == []


def test_select_hazard_repair_adds_split():
    res = lowered_for("select")
    f = res.module.kernel
    perturb(f, Mode.SELECT, 0)
    assert not any(i.op == "split" for _, i in f.instructions())
    fixes = repair_divergence(f, res.divergent[f.name], res.uniform[f.name])
    assert any("synthesized split/join" in x for x in fixes)
    assert verify_module(res.module) == []
    assert check_nesting(f) == []


@pytest.mark.parametrize("name", sorted(lowered_corpus()))
def test_repair_is_identity_on_clean_output(name):
    res = run_pipeline(fresh(name), PipelineConfig(repair=False))
    for f in res.module.functions:
        assert repair_divergence(f, res.divergent[f.name], res.uniform[f.name]) == []


def test_no_applicable_site():
    res = run_pipeline(fresh("uniform_branch"), PipelineConfig(repair=False))
    with pytest.raises(NoApplicableSite):
        perturb_module(res.module, "remat", 0)
    with pytest.raises(NoApplicableSite):
        perturb_module(res.module, "select", 0)


def test_perturbation_is_seeded():
    texts = set()
    for _ in range(2):
        res = run_pipeline(fresh("nested_if"), PipelineConfig(repair=False))
        perturb_module(res.module, "invert", 5)
        texts.add(print_module(res.module))
    assert len(texts) == 1
