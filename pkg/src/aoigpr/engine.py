"""Slotted simulation loop, traces and AoI metrics.

Every slot has two phases.  First all agents decide from what they knew at
the start of the slot; then the environment moves, draws gains, resolves the
joint interference and rates, serves the queues and ages the receivers.  Row
``t`` of a trace holds the slot-t decision and its outcome, the AoI at the
start of slot t+1.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import allocator
from .allocator import ActionSpace, AgentParams
from .config import ScenarioConfig, SeedStreams
from .env import VehicularEnv
from .link import AoiState, PacketQueue, interference_matrix, serve_queue, update_aoi

POLICIES = ("proposed", "baseline2", "baseline1")

FLAG_FALLBACK = 1
FLAG_REFIT = 2

TRACE_COLUMNS = ["slot", "pair", "delta_ms", "mu_ms", "sigma2_ms2", "rate_pkts",
                 "total_power_w", "delivered", "flags"]


@dataclass
class SlotTrace:
    """Per-(slot, pair) observables as T x K arrays (mu/sigma2 NaN when absent)."""

    delta_ms: np.ndarray
    mu_ms: np.ndarray
    sigma2_ms2: np.ndarray
    rate_pkts: np.ndarray
    total_power_w: np.ndarray
    delivered: np.ndarray
    flags: np.ndarray
    levels: np.ndarray
    interference_w: np.ndarray | None = None

    @classmethod
    def empty(cls, T: int, K: int, N: int, keep_interference: bool = False) -> "SlotTrace":
        nan = lambda: np.full((T, K), np.nan)
        return cls(
            delta_ms=np.zeros((T, K)), mu_ms=nan(), sigma2_ms2=nan(),
            rate_pkts=np.zeros((T, K)), total_power_w=np.zeros((T, K)),
            delivered=np.zeros((T, K), dtype=bool), flags=np.zeros((T, K), dtype=np.int64),
            levels=np.zeros((T, K, N), dtype=np.int8),
            interference_w=np.zeros((T, K, N)) if keep_interference else None,
        )

    @property
    def T(self) -> int:
        return self.delta_ms.shape[0]

    @property
    def K(self) -> int:
        return self.delta_ms.shape[1]


@dataclass
class MetricsReport:
    violation_prob: float
    avg_aoi_ms: float
    ccdf: list[tuple[float, float]]
    rmse_ms: list[float] | None
    mean_sigma2: list[float] | None
    warmup: int
    n_samples: int
    d_ms: float

    @property
    def rmse_mean(self) -> float | None:
        if not self.rmse_ms:
            return None
        vals = [r for r in self.rmse_ms if math.isfinite(r)]
        return math.fsum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "violation_prob": self.violation_prob,
            "avg_aoi_ms": self.avg_aoi_ms,
            "rmse_ms": self.rmse_ms,
            "rmse_mean_ms": self.rmse_mean,
            "mean_sigma2_ms2": self.mean_sigma2,
            "warmup": self.warmup,
            "n_samples": self.n_samples,
            "d_ms": self.d_ms,
        }


# --- metrics -----------------------------------------------------------------

def ccdf(aoi_samples, grid) -> list[tuple[float, float]]:
    """Points (x, fraction of samples strictly above x)."""
    s = np.sort(np.asarray(aoi_samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("ccdf of an empty sample")
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    above = s.size - np.searchsorted(s, grid, side="right")
    return [(float(x), float(a) / s.size) for x, a in zip(grid, above)]


def violation_rate(aoi_samples, d: float) -> float:
    s = np.asarray(aoi_samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("violation rate of an empty sample")
    return float(np.count_nonzero(s > d)) / s.size


def rmse(mu, actual) -> float:
    """Root-mean-square prediction error over entries with a prediction."""
    mu = np.asarray(mu, dtype=float)
    actual = np.asarray(actual, dtype=float)
    have = np.isfinite(mu)
    if not have.any():
        raise ValueError("no predictions recorded")
    err = mu[have] - actual[have]
    return math.sqrt(math.fsum(err * err) / err.size)


def ccdf_grid(samples, step_ms: float, d_ms: float) -> np.ndarray:
    top = float(np.max(samples)) if len(samples) else 0.0
    n = int(math.floor(top / step_ms)) + 2
    grid = np.arange(n) * step_ms
    return np.unique(np.append(grid, d_ms))


def compute_metrics(trace: SlotTrace, cfg: ScenarioConfig, learning: bool,
                    warmup: int | None = None) -> MetricsReport:
    w = cfg.warmup_slots if warmup is None else warmup
    rows = slice(min(w, trace.T), trace.T)
    samples = trace.delta_ms[rows]
    d_ms = cfg.d_ms
    if samples.size == 0:
        zeros = [0.0] * trace.K
        return MetricsReport(0.0, 0.0, [], zeros if learning else None,
                             zeros if learning else None, w, 0, d_ms)
    flat = samples.ravel()
    grid = ccdf_grid(flat, cfg.ccdf_step * 1e3, d_ms)
    rmses = sig = None
    if learning:
        rmses, sig = [], []
        for k in range(trace.K):
            mu = trace.mu_ms[rows, k]
            try:
                rmses.append(rmse(mu, samples[:, k]))
            except ValueError:
                rmses.append(float("nan"))
            s2 = trace.sigma2_ms2[rows, k]
            s2 = s2[np.isfinite(s2)]
            sig.append(math.fsum(s2) / s2.size if s2.size else float("nan"))
    return MetricsReport(
        violation_prob=violation_rate(flat, d_ms),
        avg_aoi_ms=math.fsum(flat) / flat.size,
        ccdf=ccdf(flat, grid),
        rmse_ms=rmses,
        mean_sigma2=sig,
        warmup=w,
        n_samples=int(flat.size),
        d_ms=d_ms,
    )


def pooled_metrics(traces: list[SlotTrace], cfg: ScenarioConfig, learning: bool) -> MetricsReport:
    """Metrics over several runs with AoI samples pooled; RMSE averaged per pair."""
    w = cfg.warmup_slots
    parts = [tr.delta_ms[min(w, tr.T):] for tr in traces]
    flat = np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0)
    if flat.size == 0:
        return compute_metrics(traces[0], cfg, learning) if traces else \
            MetricsReport(0.0, 0.0, [], None, None, w, 0, cfg.d_ms)
    per = [compute_metrics(tr, cfg, learning) for tr in traces]
    rm = sg = None
    if learning:
        rm = [r for m in per for r in m.rmse_ms]
        sg = [s for m in per for s in m.mean_sigma2]
    grid = ccdf_grid(flat, cfg.ccdf_step * 1e3, cfg.d_ms)
    return MetricsReport(violation_rate(flat, cfg.d_ms), math.fsum(flat) / flat.size,
                         ccdf(flat, grid), rm, sg, w, int(flat.size), cfg.d_ms)


# --- the loop ------------------------------------------------------------------

def build_space(cfg: ScenarioConfig) -> ActionSpace:
    return ActionSpace(cfg.N, cfg.p, cfg.L, cfg.P_max, cfg.learning.candidates)


def run_simulation(cfg: ScenarioConfig, policy: str = "proposed", *, workers: int = 1,
                   gain_fn: Callable[[int], np.ndarray] | None = None,
                   space: ActionSpace | None = None, alpha_i: float | None = None,
                   keep_interference: bool = False) -> tuple[SlotTrace, MetricsReport]:
    """Simulate ``cfg.T`` slots for every pair under ``policy``.

    ``baseline2`` is the learning agent with ``alpha_i = 0``; ``baseline1``
    draws a uniformly random feasible action each slot.  ``gain_fn(t)`` may
    replace the vehicular channel with a fixed K x K x N gain tensor source.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    # files need T >= 1, but a zero-slot run is a valid (empty) simulation
    (cfg.with_(T=1) if cfg.T == 0 else cfg).validate()
    K, N, T = cfg.K, cfg.N, cfg.T
    streams = SeedStreams(cfg.seed)
    space = space if space is not None else build_space(cfg)
    trace = SlotTrace.empty(T, K, N, keep_interference)
    learning = policy != "baseline1"
    if T == 0:
        return trace, compute_metrics(trace, cfg, learning)

    if gain_fn is None:
        env = VehicularEnv(K, N, cfg.tau, cfg.channel, cfg.mobility, streams)
        gain_fn = lambda t: env.step()

    if policy == "baseline2":
        alpha_i = 0.0
    params = AgentParams.from_config(cfg, alpha_i)
    theta0 = allocator.initial_theta(cfg)
    init_rngs = [streams.generator("agent-init", k) for k in range(K)]
    base_rngs = [streams.generator("baseline-policy", k) for k in range(K)]
    agents = [
        allocator.new_agent(cfg.M, theta0, allocator.random_policy(space, init_rngs[k]),
                            rng=streams.generator("tie-breaking", k),
                            fit_rng=streams.generator("agent", k))
        for k in range(K)
    ] if learning else None

    queues = [PacketQueue(cfg.Z) for _ in range(K)]
    aoi = [AoiState(0.0, None, cfg.tau) for _ in range(K)]
    A = cfg.A
    unit = cfg.p / cfg.L
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def decide(k: int, t: int):
        if not learning:
            return allocator.random_policy(space, base_rngs[k]), None, 0
        agent = agents[k]
        if t == 0:
            return agent.last_action, None, 0
        dec = allocator.agent_step(agent, aoi[k].delta * 1e3, t, space, params)
        flags = (FLAG_FALLBACK if dec.fallback else 0) | (FLAG_REFIT if dec.refit else 0)
        return dec.action, dec.posterior, flags

    try:
        for t in range(T):
            # phase 1: decisions from slot-start knowledge only
            if pool is not None:
                results = list(pool.map(decide, range(K), [t] * K))
            else:
                results = [decide(k, t) for k in range(K)]
            levels = np.array([r[0] for r in results], dtype=np.int64)
            powers = levels * unit

            # phase 2: environment resolution
            gains = gain_fn(t)
            interf = interference_matrix(powers, gains)
            own = np.einsum("kkn->kn", gains)
            sinr = powers * own / (cfg.N0 * cfg.W + interf)
            rates = cfg.tau / cfg.Z * cfg.W * np.log2(1.0 + sinr).sum(axis=1)
            for k in range(K):
                _, gen = serve_queue(queues[k], float(rates[k]), A, t, cfg.supersede)
                aoi[k] = update_aoi(aoi[k], gen, t, cfg.tau)
                trace.delivered[t, k] = gen is not None
                trace.delta_ms[t, k] = round(aoi[k].delta * 1e3, 9)
                post = results[k][1]
                if post is not None:
                    trace.mu_ms[t, k] = post.mu
                    trace.sigma2_ms2[t, k] = post.sigma2
                trace.flags[t, k] = results[k][2]
            trace.rate_pkts[t] = rates
            trace.total_power_w[t] = powers.sum(axis=1)
            trace.levels[t] = levels
            if trace.interference_w is not None:
                trace.interference_w[t] = np.where(powers > 0, interf, 0.0)
    finally:
        if pool is not None:
            pool.shutdown()
    trace.queues = queues
    return trace, compute_metrics(trace, cfg, learning)


def run_seeds(cfg: ScenarioConfig, policy: str, seeds, **kw):
    """Independent runs per seed; returns (traces, per-seed reports, pooled report)."""
    traces, reports = [], []
    for s in seeds:
        tr, rep = run_simulation(cfg.with_(seed=int(s)), policy, **kw)
        traces.append(tr)
        reports.append(rep)
    return traces, reports, pooled_metrics(traces, cfg, policy != "baseline1")


# --- trace I/O -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def flag_text(code: int) -> str:
    parts = []
    if code & FLAG_FALLBACK:
        parts.append("fallback")
    if code & FLAG_REFIT:
        parts.append("refit")
    return "|".join(parts)


def write_trace_csv(trace: SlotTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t in range(trace.T):
            for k in range(trace.K):
                w.writerow([t, k, _fmt(trace.delta_ms[t, k]), _fmt(trace.mu_ms[t, k]),
                            _fmt(trace.sigma2_ms2[t, k]), _fmt(trace.rate_pkts[t, k]),
                            _fmt(trace.total_power_w[t, k]), int(trace.delivered[t, k]),
                            flag_text(int(trace.flags[t, k]))])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Load a trace CSV back into T x K arrays keyed by column."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    T = max(int(r["slot"]) for r in rows) + 1
    K = max(int(r["pair"]) for r in rows) + 1
    out = {c: np.full((T, K), np.nan) for c in TRACE_COLUMNS[2:8]}
    for r in rows:
        t, k = int(r["slot"]), int(r["pair"])
        for c in TRACE_COLUMNS[2:8]:
            out[c][t, k] = float(r[c]) if r[c] != "" else np.nan
    return out


def write_ccdf_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold_ms", "ccdf"])
        for x, p in report.ccdf:
            w.writerow([repr(x), repr(p)])
