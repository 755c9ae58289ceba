import numpy as np
import pytest
from conftest import fresh, small_cfg
from hypothesis import given, settings
from hypothesis import strategies as st

from simtforge.harness import Verdict, compare
from simtforge.launch import buffer_words, plan_launch
from simtforge.oracle import (
    DeadlockError,
    OracleError,
    OracleExcluded,
    diff_outcomes,
    run_oracle,
)
from simtforge.parser import parse_module
from simtforge.pipeline import run_pipeline
from simtforge.sim import (
    Launch,
    Machine,
    SimError,
    Status,
    UniformityViolation,
    run_simt,
)


def block_trace(m, cfg, args):
    """(block, mask) of warp 0 each time it enters a new block."""
    mach = Machine(m, cfg)
    mach.launch(args)
    w = mach.warps[0]
    out, last = [], None
    while w.status is Status.ACTIVE:
        fn = w.frames[-1].fn
        here = fn.block_at[w.frames[-1].pc]
        if here != last:
            out.append((here, w.mask))
            last = here
        mach.step(w)
    return out, mach


def out_words(res, plan, name, count):
    start, _ = plan.buffers[name]
    return [int(x) for x in res.memory[start:start + count]]


# simulator


def test_diamond_mask_trace():
    cfg = small_cfg()
    m = run_pipeline(fresh("diamond"), cfg).module
    trace, mach = block_trace(m, cfg, {"out": 0, "n": 2})
    # the join block is entered once per arm; its first join switches arms, the second restores
    assert trace == [("entry", 0xF), ("then", 0x3), ("join", 0x3), ("else", 0xC), ("join", 0xC)]
    assert mach.warps[0].mask == 0xF and mach.warps[0].ipdom == []
    assert mach.metrics.splits_executed == 1 and mach.metrics.joins_executed == 2
    assert [int(x) for x in mach.memory[:4]] == [10, 11, 22, 23]


def test_diamond_unanimous_split_keeps_mask():
    cfg = small_cfg()
    m = run_pipeline(fresh("diamond"), cfg).module
    trace, _ = block_trace(m, cfg, {"out": 0, "n": 100})
    assert trace == [("entry", 0xF), ("then", 0xF), ("join", 0xF)]


def test_pred_loop_narrows_then_restores():
    cfg = small_cfg()
    m = run_pipeline(fresh("while_tid"), cfg).module
    trace, mach = block_trace(m, cfg, {"out": 0})
    heads = [mask for blk, mask in trace if blk == "head"]
    # lane t runs t & 3 iterations; pred drops finished lanes one at a time
    assert heads == [0xF, 0xE, 0xC, 0x8]
    assert [mask for blk, mask in trace if blk == "done"] == [0xF]
    assert [int(x) for x in mach.memory[:4]] == [0, 1, 4, 9]


def test_raw_spawn_launch():
    cfg = small_cfg(warp_count=4)
    m = fresh("raw_spawn")
    res = run_simt(m, cfg, {"out": 0}, launch=Launch.RAW)
    assert [int(x) for x in res.memory[:16]] == list(range(16))
    assert res.violations == []


def test_vote_and_shuffle_values():
    cfg = small_cfg()
    m = run_pipeline(fresh("vote_shfl"), cfg).module
    res = run_simt(m, cfg, {"out": 0})
    # ballot of odd lanes is 0b1010, any is 1, all is 0; each lane reads (t ^ 1)^2
    assert [int(x) for x in res.memory[:4]] == [12, 11, 20, 15]


def test_uniformity_violation_is_raised():
    cfg = small_cfg()
    res = run_pipeline(fresh("bad_annot"), cfg)
    plan = plan_launch(res.module.kernel, cfg)
    with pytest.raises(UniformityViolation):
        run_simt(res.module, plan.cfg, plan.args, plan.mem_init, uniform=res.uniform)


def test_out_of_bounds_store():
    cfg = small_cfg(mem_words=8)
    m = run_pipeline(fresh("diamond"), cfg).module
    with pytest.raises(SimError):
        run_simt(m, cfg, {"out": 6, "n": 2})


def test_step_limit():
    text = "kernel @spin(%o: addr) {\nentry:\n  br ^entry.l\nentry.l:\n  br ^entry.l\n}\n"
    with pytest.raises(SimError, match="steps"):
        run_simt(parse_module(text), small_cfg(), {"o": 0}, step_limit=100)


def test_metrics_json_is_sorted_and_stable():
    cfg = small_cfg()
    m = run_pipeline(fresh("diamond"), cfg).module
    a = run_simt(m, cfg, {"out": 0, "n": 2}).metrics.to_json()
    b = run_simt(m, cfg, {"out": 0, "n": 2}).metrics.to_json()
    assert a == b
    assert '"dyn_instrs": ' in a and a.index("barriers_hit") < a.index("dyn_instrs")


# oracle


def test_oracle_diamond():
    cfg = small_cfg()
    out = run_oracle(fresh("diamond"), cfg, {"out": 0, "n": 2})
    assert [int(x) for x in out.memory[:4]] == [10, 11, 22, 23]


def test_oracle_barrier_neighbour():
    cfg = small_cfg(warp_count=2)
    T = 8
    plan = plan_launch(fresh("barrier_neighbor").kernel, cfg, inits={"buf": [0] * (T + 1)})
    out = run_oracle(fresh("barrier_neighbor"), plan.cfg, plan.args, plan.mem_init)
    got = out_words(out, plan, "out", T)
    assert got == [4 * t + 3 for t in range(T - 1)] + [T - 1]


def test_oracle_vote_matches_simulator():
    cfg = small_cfg(warp_count=2)
    ref = run_oracle(fresh("vote_shfl"), cfg, {"out": 0})
    sim = run_simt(run_pipeline(fresh("vote_shfl"), cfg).module, cfg, {"out": 0})
    assert diff_outcomes(ref, sim).match


DIVERGENT_VOTE = (
    "kernel @dv(%o: addr) {\nentry:\n  %t = tid\n  %one = const 1\n  %b = and %t, %one\n"
    "  %c = icmp eq %b, %one\n  br %c, ^v, ^x\nv:\n  %a = vote.any %c\n  br ^x\nx:\n  ret\n}\n"
)


def test_oracle_excludes_divergent_collective():
    with pytest.raises(OracleExcluded):
        run_oracle(parse_module(DIVERGENT_VOTE), small_cfg(), {"o": 0})
    r = compare(parse_module(DIVERGENT_VOTE), small_cfg())
    assert r.verdict is Verdict.EXCLUDED


def test_oracle_detects_barrier_deadlock():
    text = (
        "kernel @dl(%o: addr) {\nentry:\n  %t = tid\n  %z = const 0\n  %c = icmp eq %t, %z\n"
        "  br %c, ^b, ^x\nb:\n  barrier 1, 2\n  br ^x\nx:\n  ret\n}\n"
    )
    with pytest.raises(DeadlockError):
        run_oracle(parse_module(text), small_cfg(warp_count=2), {"o": 0})


def test_oracle_division_by_zero():
    text = "kernel @dz(%o: addr) {\nentry:\n  %t = tid\n  %z = const 0\n  %q = udiv %t, %z\n  ret\n}\n"
    with pytest.raises(OracleError, match="udiv"):
        run_oracle(parse_module(text), small_cfg(), {"o": 0})


def test_diff_reports_first_differences():
    cfg = small_cfg()
    a = run_oracle(fresh("diamond"), cfg, {"out": 0, "n": 2})
    b = run_oracle(fresh("diamond"), cfg, {"out": 0, "n": 3})
    d = diff_outcomes(a, b)
    assert not d.match
    assert d.report == ["mem[2]: 0x00000016 != 0x0000000c"]


# launch conventions


def test_launch_plan_layout():
    cfg = small_cfg(warp_count=2)
    plan = plan_launch(fresh("barrier_neighbor").kernel, cfg, seed=3)
    size = buffer_words(cfg)
    assert size == 4 * 8 + 64
    assert plan.buffers == {"buf": (0, size), "out": (size, size)}
    assert plan.cfg.mem_words == 2 * size
    assert plan.mem_init.max() < 32
    again = plan_launch(fresh("barrier_neighbor").kernel, cfg, seed=3)
    assert np.array_equal(plan.mem_init, again.mem_init)


def test_launch_plan_rejects_unknown_names():
    with pytest.raises(ValueError, match="nope"):
        plan_launch(fresh("diamond").kernel, small_cfg(), {"nope": 1})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100), st.sampled_from([(1, 4), (2, 8), (3, 5)]))
def test_diamond_differential_any_bound(n, warps):
    cfg = small_cfg(warp_count=warps[0], warp_size=warps[1])
    assert compare(fresh("diamond"), cfg, {"n": n}).verdict is Verdict.MATCH
