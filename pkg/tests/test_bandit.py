import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from molarkit.bandit import (
    BanditWorld,
    EligibilityRule,
    PolicySpec,
    RegretTrace,
    build_schedule,
    choose_arm,
    eligibility_set,
    min_eigen_probe,
    read_trace_csv,
    regret_summary,
    run_episode,
    substreams,
    write_refit_log_csv,
    write_trace_csv,
)
from molarkit.core import gram_min_eig_ratio
from molarkit.data import BanditWorldSpec, gen_bandit_world
from molarkit.exceptions import InvalidHorizon, NoConvergenceWarning, ShapeMismatch

POLICIES = [PolicySpec("molar"), PolicySpec("ols"), PolicySpec("lasso"), PolicySpec("rm")]


def small_world(seed=0, **kw):
    args = dict(d=4, s=1, M=4, K=3, T=200, noise_scale=0.3, seed=seed)
    args.update(kw)
    return gen_bandit_world(BanditWorldSpec(**args))


# ---------------------------------------------------------------- schedule

def test_schedule_examples():
    assert build_schedule(8, 1).boundaries == [(1, 1), (2, 2), (3, 4), (5, 8)]
    sch = build_schedule(5, 5)
    assert sch.boundaries == [(1, 5)] and sch.count == 0
    assert build_schedule(7, 1).boundaries[-1] == (5, 7)


@given(st.integers(1, 5000), st.integers(1, 64))
def test_schedule_partitions_horizon(T, H0):
    if H0 > T:
        with pytest.raises(InvalidHorizon):
            build_schedule(T, H0)
        return
    sch = build_schedule(T, H0)
    b = sch.boundaries
    assert b[0] == (1, H0) and b[-1][1] == T
    for (s0, e0), (s1, e1) in zip(b, b[1:]):
        assert s1 == e0 + 1 and e1 >= s1
    for q, (s, e) in enumerate(b[1:-1], start=1):
        assert e - s + 1 == (2 ** (q - 1)) * H0
    assert sch.count == len(b) - 1
    assert sch.count == (0 if T == H0 else int(np.ceil(np.log2(T / H0) - 1e-12)))


def test_schedule_rejects_bad_input():
    with pytest.raises(InvalidHorizon):
        build_schedule(0, 1)
    with pytest.raises(InvalidHorizon):
        build_schedule(10, 0)


# ---------------------------------------------------------------- eligibility

def test_eligibility_examples():
    rule = EligibilityRule(dimension_factor=2.0)
    assert rule.threshold(2, 100, 5, 3) == 10
    assert eligibility_set([50, 3], rule, 2, 100, 5) == {0}  # the first instance
    assert eligibility_set([0, 0, 0], rule, 3, 100, 5) == set()
    assert eligibility_set([10, 11, 99], rule, 3, 100, 5) == {0, 1, 2}


@given(st.integers(1, 50), st.integers(1, 100), st.integers(1, 10**5), st.integers(1, 10),
       st.floats(0.01, 10), st.sampled_from(["theory", "dimension"]))
def test_eligibility_threshold_at_least_d_plus_one(d, M, T, K, f, mode):
    rule = EligibilityRule(mode=mode, dimension_factor=f, c_b=0.01)
    assert rule.threshold(M, T, d, K) >= d + 1


def test_theory_threshold_formula():
    rule = EligibilityRule(mode="theory", c_b=1.0, subgaussian_L=1.0, mu=0.1)
    inner = max(np.log(3) / 0.1, np.e)
    expect = int(np.ceil(2 * (np.log(20 * 3000) + 30 * np.log(inner))))
    assert rule.threshold(20, 3000, 30, 3) == max(31, expect)


# ---------------------------------------------------------------- choose_arm

def test_choose_arm_uniform_on_ties():
    r = np.random.default_rng(0)
    picks = [choose_arm(r.normal(size=(3, 4)), np.zeros(4), r) for _ in range(6000)]
    freq = np.bincount(picks, minlength=3) / 6000
    assert np.all(np.abs(freq - 1 / 3) < 0.03)


def test_choose_arm_argmax_and_scaling():
    ctx = np.array([[0.1, 5.0], [0.9, -1.0], [0.4, 0.0]])
    e1 = np.array([1.0, 0.0])
    assert choose_arm(ctx, e1, np.random.default_rng(1)) == 1
    r = np.random.default_rng(2)
    for _ in range(50):
        c, b = r.normal(size=(4, 3)), r.normal(size=3)
        a = choose_arm(c, b, np.random.default_rng(9))
        assert a == choose_arm(c, 7.5 * b, np.random.default_rng(9))
    # model P: one context, one estimate per arm
    assert choose_arm(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [2.0, 0.0]]), r) == 1
    with pytest.raises(ShapeMismatch):
        choose_arm(np.ones(3), np.ones(3), r)


def test_choose_arm_scaling_keeps_ties():
    ctx = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    for s in range(20):
        a = choose_arm(ctx, np.array([1.0, 3.0]), np.random.default_rng(s))
        assert a == choose_arm(ctx, np.array([4.0, 12.0]), np.random.default_rng(s))
        assert a in (0, 1)


# ---------------------------------------------------------------- episodes

@pytest.mark.parametrize("model", ["C", "P"])
def test_single_arm_has_no_regret(model):
    world = small_world(K=1, model=model)
    tr = run_episode(world, PolicySpec("molar"), seed=3)
    assert np.all(tr.per_instance_cumulative == 0.0)


def test_inactive_instance_row_is_zero():
    world = small_world(activation=[0.0, 0.5, 1.0, 0.3])
    tr = run_episode(world, PolicySpec("ols"), seed=1)
    assert tr.activation_counts[0] == 0 and np.all(tr.per_instance_cumulative[0] == 0)
    assert tr.activation_counts[2] == world.T
    assert np.all(tr.actions[0] == -1)


@pytest.mark.parametrize("model", ["C", "P"])
def test_oracle_noiseless_zero_regret(model):
    world = small_world(noise_scale=0.0, model=model)
    tr = run_episode(world, PolicySpec("oracle"), seed=5)
    assert np.all(tr.final == 0.0)
    assert tr.batch_refit_log == []


@pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.name)
@pytest.mark.parametrize("model", ["C", "P"])
def test_regret_trace_invariants(policy, model):
    world = small_world(seed=2, model=model, T=300)
    sched = build_schedule(300, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        tr = run_episode(world, policy, sched, seed=11)
        again = run_episode(world, policy, sched, seed=11)
    cum = tr.per_instance_cumulative
    assert np.all(cum >= 0) and np.all(np.diff(cum, axis=1) >= 0)
    # constant while inactive
    inactive = tr.actions[:, 1:] == -1
    assert np.all(np.diff(cum, axis=1)[inactive] == 0)
    # bit-identical replay
    np.testing.assert_array_equal(cum, again.per_instance_cumulative)
    np.testing.assert_array_equal(tr.actions, again.actions)
    # buffers reconcile with activations
    np.testing.assert_array_equal(tr.consumed_counts + tr.carried_counts, tr.activation_counts)
    # refits happen only at batch ends before T, in order
    ends = [e for _, e in sched.boundaries if e < 300]
    batches = sorted({e["batch"] for e in tr.batch_refit_log})
    assert batches == list(range(len(ends)))
    if model == "P":
        assert {e["arm"] for e in tr.batch_refit_log} == {0, 1, 2}


def test_environment_streams_shared_across_policies():
    world = small_world(seed=4, activation=[1.0, 1.0, 1.0, 1.0])
    a = run_episode(world, PolicySpec("oracle"), seed=8)
    b = run_episode(world, PolicySpec("ols"), seed=8)
    np.testing.assert_array_equal(a.activation_counts, b.activation_counts)
    names = set(substreams(0))
    assert names == {"activation", "contexts", "noise", "tiebreak"}


def test_molar_single_instance_matches_ols():
    for seed in range(5):
        world = small_world(seed=seed, M=1, T=400)
        a = run_episode(world, PolicySpec("molar"), seed=seed)
        b = run_episode(world, PolicySpec("ols"), seed=seed)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.per_instance_cumulative, b.per_instance_cumulative)


def test_refit_log_records_tau_and_eligibility():
    world = small_world(seed=1, T=400, activation=[1.0, 1.0, 0.2, 0.0])
    tr = run_episode(world, PolicySpec("molar"), seed=0)
    thr = EligibilityRule().threshold(4, 400, 4, 3)
    for e in tr.batch_refit_log:
        assert 3 not in e["eligible"]
        if e["eligible"]:
            assert 1 <= e["tau"] <= len(e["eligible"])
    assert any(len(e["eligible"]) >= 2 for e in tr.batch_refit_log)
    assert thr == 8


def test_world_validation():
    with pytest.raises(ValueError):
        BanditWorld(model="C", d=2, K=2, M=1, T=10, true_params=np.array([[2.0, 0.0]]),
                    activation_probs=np.array([0.5]), noise_scale=0.1)
    with pytest.raises(ValueError):
        BanditWorld(model="C", d=2, K=2, M=1, T=10, true_params=np.array([[0.5, 0.0]]),
                    activation_probs=np.array([1.5]), noise_scale=0.1)


def test_schedule_must_match_world():
    with pytest.raises(InvalidHorizon):
        run_episode(small_world(T=100), PolicySpec("ols"), build_schedule(50, 1))


# ---------------------------------------------------------------- summaries

def _trace(values, seed=0):
    return RegretTrace(np.array([values], dtype=float), np.array([len(values)]), [], seed)


def test_regret_summary_examples():
    s = regret_summary([_trace([1.0, 10.0])])
    assert s.stderr[0, -1] == 0.0
    s = regret_summary([_trace([1.0, 10.0]), _trace([1.0, 10.0])])
    assert s.mean[0, -1] == 10.0 and s.stderr[0, -1] == 0.0
    s = regret_summary([_trace([10.0]), _trace([14.0])])
    assert s.mean[0, 0] == 12.0 and s.stderr[0, 0] == pytest.approx(2.0)
    with pytest.raises(ShapeMismatch):
        regret_summary([_trace([1.0]), _trace([1.0, 2.0])])


def test_trace_csv_round_trip(tmp_path):
    world = small_world(seed=0, T=64)
    traces = [run_episode(world, PolicySpec("molar"), seed=s) for s in range(2)]
    write_trace_csv(traces, tmp_path / "t.csv")
    write_refit_log_csv(traces, tmp_path / "r.csv")
    rows = read_trace_csv(tmp_path / "t.csv")
    assert len(rows) == 2 * world.M * 64
    for r in rows[:: 37]:
        tr = traces[r["seed"]]
        assert r["cumulative_regret"] == tr.per_instance_cumulative[r["instance"], r["round"] - 1]
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "policy,seed,batch,eligible_count,tau"


# ---------------------------------------------------------------- eigen probe

def test_eigen_ratio_on_injected_buffers():
    d, r = 5, 4
    assert gram_min_eig_ratio(np.vstack([np.eye(d)] * r)) == pytest.approx(1 / d)
    assert gram_min_eig_ratio(np.ones((1, d))) == 0.0


def test_min_eigen_probe_records_every_refit():
    world = small_world(seed=0, T=300)
    log = min_eigen_probe(world, PolicySpec("ols"), seed=1, rule=EligibilityRule(dimension_factor=4))
    assert log and all(e["n"] >= 16 for e in log)
    assert all(e["ratio"] > 0 for e in log)
