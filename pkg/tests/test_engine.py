import math

import numpy as np
import pytest

from aoigpr import allocator, engine
from aoigpr.config import ScenarioConfig
from aoigpr.engine import (
    FLAG_REFIT,
    ccdf,
    compute_metrics,
    read_trace_csv,
    rmse,
    run_seeds,
    run_simulation,
    violation_rate,
    write_ccdf_csv,
    write_trace_csv,
)

SMALL = ScenarioConfig().with_(K=3, N=3, T=160, M=30, arrival_rate=1e6, warmup=40,
                               **{"learning.candidates": "exhaustive", "learning.refit_period": 20})


def single_link(T=800):
    # one pair, one RB, actions {0, p}, a new update every 4 slots
    return ScenarioConfig().with_(K=1, N=1, P_max=0.01, arrival_rate=4000 / 3e-3 / 4, T=T, M=100,
                                  **{"learning.candidates": "exhaustive"})


def strong(t):
    return np.full((1, 1, 1), 1e3)


# --- metrics ---------------------------------------------------------------------

def test_ccdf_examples():
    assert ccdf([5, 5, 5], [10])[0][1] == 0.0
    assert ccdf([1, 2, 3, 4], [2])[0][1] == 0.5
    assert ccdf([3, 4], [1])[0][1] == 1.0
    with pytest.raises(ValueError):
        ccdf([], [1])
    with pytest.raises(ValueError):
        ccdf([1], [2, 1])


def test_rmse_examples():
    assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert rmse([3.5, 4.5, np.nan], [1.0, 2.0, 99.0]) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        rmse([np.nan], [1.0])


def test_violation_rate_examples():
    assert violation_rate([1, 5, 10], 10) == 0.0
    assert violation_rate([5, 15], 10) == 0.5
    s = np.random.default_rng(0).uniform(0, 30, 500)
    assert violation_rate(s, 10.0) == ccdf(s, [10.0])[0][1]


# --- single link --------------------------------------------------------------------

def _sawtooth_share(delta):
    """Share of slots whose age follows the 3-6-9-12 ms cycle of one update per 4 slots."""
    phase = int(np.argmin(delta[:4]))
    want = np.tile([3.0, 6.0, 9.0, 12.0], len(delta) // 4 + 2)[4 - phase:4 - phase + len(delta)]
    return float(np.mean(np.isclose(delta, want, rtol=0, atol=1e-9)))


def test_single_link_settles_to_update_sawtooth():
    tr, _ = run_simulation(single_link(), "baseline2", gain_fn=strong)
    tail = tr.delta_ms[-200:, 0]
    assert _sawtooth_share(tail) == 1.0
    assert np.all(np.diff(np.flatnonzero(tr.delivered[-200:, 0])) == 4)


def test_single_link_with_exploration_mostly_on_sawtooth():
    # exploration occasionally tries the silent action, which stretches one tooth
    tr, _ = run_simulation(single_link(), "proposed", gain_fn=strong)
    assert _sawtooth_share(tr.delta_ms[-200:, 0]) >= 0.95


def test_zero_slots():
    tr, rep = run_simulation(SMALL.with_(T=0), "proposed")
    assert tr.T == 0
    assert rep.violation_prob == 0.0 and rep.avg_aoi_ms == 0.0 and rep.ccdf == []
    assert rep.rmse_ms == [0.0] * 3
    assert all(math.isfinite(v) for v in rep.mean_sigma2)


def test_unknown_policy():
    with pytest.raises(ValueError):
        run_simulation(SMALL, "oracle")


# --- determinism / structure ------------------------------------------------------

def test_same_seed_bit_identical(tmp_path):
    a, _ = run_simulation(SMALL, "proposed")
    b, _ = run_simulation(SMALL, "proposed")
    for name in ("delta_ms", "mu_ms", "sigma2_ms2", "rate_pkts", "total_power_w", "levels"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    write_trace_csv(a, tmp_path / "a.csv")
    write_trace_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_parallel_decisions_do_not_change_output():
    a, _ = run_simulation(SMALL, "proposed", workers=1)
    b, _ = run_simulation(SMALL, "proposed", workers=8)
    np.testing.assert_array_equal(a.delta_ms, b.delta_ms)
    np.testing.assert_array_equal(a.mu_ms, b.mu_ms)
    np.testing.assert_array_equal(a.levels, b.levels)


def test_baseline2_is_proposed_without_exploration():
    a, _ = run_simulation(SMALL, "baseline2")
    b, _ = run_simulation(SMALL.with_(alpha_i=0.0), "proposed")
    np.testing.assert_array_equal(a.levels, b.levels)
    np.testing.assert_array_equal(a.mu_ms, b.mu_ms)


def test_baseline1_has_no_predictions():
    tr, rep = run_simulation(SMALL, "baseline1")
    assert np.all(np.isnan(tr.mu_ms)) and rep.rmse_ms is None


def test_trace_records_every_slot_and_pair():
    tr, _ = run_simulation(SMALL, "proposed", keep_interference=True)
    assert tr.delta_ms.shape == (160, 3) and tr.levels.shape == (160, 3, 3)
    np.testing.assert_allclose(tr.total_power_w, tr.levels.sum(axis=2) * SMALL.p)
    assert np.all(tr.interference_w[tr.levels == 0] == 0)
    assert np.all(tr.delta_ms >= 0)
    assert np.any(tr.flags & FLAG_REFIT)
    # predictions start with the first learning step
    assert np.all(np.isnan(tr.mu_ms[0])) and np.all(np.isfinite(tr.mu_ms[1:]))


def test_decisions_precede_outcomes(monkeypatch):
    events = []
    real_step = allocator.agent_step

    def step(agent, observed, t, space, params):
        events.append(("decide", t, observed))
        return real_step(agent, observed, t, space, params)

    monkeypatch.setattr(allocator, "agent_step", step)
    cfg = SMALL.with_(T=30)

    def gains(t):
        events.append(("env", t, None))
        return np.full((3, 3, 3), 1e-9)

    tr, _ = run_simulation(cfg, "proposed", gain_fn=gains)
    for t in range(1, 30):
        env_at = events.index(("env", t, None))
        decided = [i for i, e in enumerate(events) if e[0] == "decide" and e[1] == t]
        assert len(decided) == 3 and max(decided) < env_at
    # the age observed when deciding slot t is the outcome recorded for slot t-1
    for kind, t, observed in events:
        if kind == "decide":
            assert np.isclose(tr.delta_ms[t - 1], observed, rtol=0, atol=1e-9).any()


def test_metrics_consistency_and_warmup():
    tr, rep = run_simulation(SMALL, "proposed")
    post = tr.delta_ms[40:]
    assert rep.warmup == 40 and rep.n_samples == post.size
    assert rep.avg_aoi_ms == pytest.approx(post.mean(), rel=1e-12)
    assert rep.violation_prob == violation_rate(post, 10.0)
    at_d = [v for x, v in rep.ccdf if x == 10.0]
    assert at_d == [rep.violation_prob]
    vals = [v for _, v in rep.ccdf]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert ScenarioConfig(M=200).warmup_slots == 200 and ScenarioConfig(M=30).warmup_slots == 100


def test_rmse_recomputed_from_csv(tmp_path):
    tr, rep = run_simulation(SMALL, "proposed")
    write_trace_csv(tr, tmp_path / "trace.csv")
    cols = read_trace_csv(tmp_path / "trace.csv")
    for k in range(3):
        mu = cols["mu_ms"][40:, k]
        d = cols["delta_ms"][40:, k]
        have = np.isfinite(mu)
        direct = math.sqrt(np.mean((mu[have] - d[have]) ** 2))
        assert rep.rmse_ms[k] == pytest.approx(direct, rel=1e-12)


def test_ccdf_csv_format(tmp_path):
    _, rep = run_simulation(SMALL, "baseline1")
    write_ccdf_csv(rep, tmp_path / "ccdf.csv")
    lines = (tmp_path / "ccdf.csv").read_text().splitlines()
    assert lines[0] == "threshold_ms,ccdf"
    assert len(lines) == len(rep.ccdf) + 1


def test_pooled_metrics_over_seeds():
    traces, reports, pooled = run_seeds(SMALL, "baseline1", [0, 1])
    assert pooled.n_samples == sum(r.n_samples for r in reports)
    both = np.concatenate([t.delta_ms[40:].ravel() for t in traces])
    assert pooled.violation_prob == violation_rate(both, 10.0)
    assert not np.array_equal(traces[0].delta_ms, traces[1].delta_ms)


def test_compute_metrics_custom_warmup():
    tr, _ = run_simulation(SMALL, "baseline1")
    rep = compute_metrics(tr, SMALL, learning=False, warmup=0)
    assert rep.n_samples == tr.delta_ms.size


def test_singular_slots_are_flagged(monkeypatch):
    def boom(*a, **kw):
        raise allocator.SingularKernelError("forced")

    monkeypatch.setattr(allocator, "select_action", boom)
    tr, _ = run_simulation(SMALL.with_(T=20), "proposed")
    assert np.all(tr.flags[1:] & engine.FLAG_FALLBACK)
    np.testing.assert_array_equal(tr.levels[1:], np.repeat(tr.levels[:1], 19, axis=0))
