"""Per-agent power/RB decisions.

Actions are integer level vectors ``l`` in ``{0..L}^N`` with power
``l * p / L`` per RB and total ``sum(l) * p / L <= P_max``.  The feasible set
is counted and indexed (in lexicographic order, first RB most significant)
with a small dynamic program, so huge sets can be sampled uniformly without
enumerating them.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from .gpr import (
    GramFactor,
    KernelHyperparams,
    Posterior,
    Sample,
    SingularKernelError,
    SlidingDataset,
    default_bounds,
    fit_hyperparams,
    gram,
)

# Above this size the exhaustive list is never materialized.
_ENUM_LIMIT = 2_000_000


def level_budget(N: int, p: float, L: int, P_max: float) -> int:
    """Largest total number of power levels allowed by the budget."""
    return min(N * L, int(math.floor(P_max * L / p * (1 + 1e-12))))


def count_table(N: int, L: int, B: int) -> list[list[int]]:
    """``ways[n][b]``: level vectors of length n with sum <= b (exact ints)."""
    ways = [[1] * (B + 1)]
    for n in range(1, N + 1):
        prev = ways[-1]
        row = [sum(prev[b - l] for l in range(min(L, b) + 1)) for b in range(B + 1)]
        ways.append(row)
    return ways


class ActionSpace:
    """The feasible power allocations and how candidates are drawn from them.

    ``cap`` is ``"exhaustive"`` or an integer S; when the feasible set is
    larger than S each decision evaluates the zero action, the previous
    action and S-1 actions sampled uniformly without replacement.
    """

    def __init__(self, N: int, p: float, L: int, P_max: float, cap="exhaustive"):
        self.N, self.p, self.L, self.P_max = N, p, L, P_max
        self.B = level_budget(N, p, L, P_max)
        self._ways = count_table(N, L, self.B)
        self.size = self._ways[N][self.B]
        self._fits_int64 = self.size < 2**62
        if self._fits_int64:
            self._ways_np = np.array(self._ways, dtype=np.int64)
        self.exhaustive = cap == "exhaustive" or self.size <= int(cap)
        if self.exhaustive and self.size > _ENUM_LIMIT:
            raise ValueError(f"{self.size} feasible actions is too many to enumerate; set a cap")
        self.cap = None if cap == "exhaustive" else int(cap)
        self._all = None
        if self.exhaustive:
            self._all = self._sorted(self.unrank(np.arange(self.size)), np.arange(self.size))

    def __len__(self) -> int:
        return self.size

    @property
    def mode(self) -> str:
        return "exhaustive" if self.exhaustive else "sampled"

    def power(self, levels) -> np.ndarray:
        return np.asarray(levels, dtype=float) * (self.p / self.L)

    def zero(self) -> np.ndarray:
        return np.zeros(self.N, dtype=np.int64)

    # -- indexing ---------------------------------------------------------
    def unrank(self, idx) -> np.ndarray:
        """Level vectors for lexicographic indices ``idx`` (array-like)."""
        if not self._fits_int64:
            return np.array([self._unrank_one(int(i)) for i in np.atleast_1d(idx)], dtype=np.int64)
        idx = np.array(idx, dtype=np.int64, copy=True).reshape(-1)
        out = np.zeros((len(idx), self.N), dtype=np.int64)
        budget = np.full(len(idx), self.B, dtype=np.int64)
        ways = self._ways_np
        for pos in range(self.N):
            rem = self.N - pos - 1
            undecided = np.ones(len(idx), dtype=bool)
            for lvl in range(self.L + 1):
                ok = undecided & (budget >= lvl)
                c = np.where(ok, ways[rem][np.maximum(budget - lvl, 0)], 0)
                take = ok & (idx < c)
                out[take, pos] = lvl
                idx = np.where(undecided & ~take, idx - c, idx)
                undecided &= ~take
            budget -= out[:, pos]
        return out

    def _unrank_one(self, i: int) -> list[int]:
        b = self.B
        levels = []
        for pos in range(self.N):
            rem = self.N - pos - 1
            for lvl in range(min(self.L, b) + 1):
                c = self._ways[rem][b - lvl]
                if i < c:
                    levels.append(lvl)
                    b -= lvl
                    break
                i -= c
        return levels

    def rank(self, levels) -> int:
        b = self.B
        i = 0
        for pos, lvl in enumerate(np.asarray(levels, dtype=np.int64)):
            rem = self.N - pos - 1
            for smaller in range(int(lvl)):
                i += self._ways[rem][b - smaller]
            b -= int(lvl)
        return i

    def _sorted(self, levels, idx):
        order = np.lexsort((np.asarray(idx), levels.sum(axis=1)))
        return levels[order]

    def random_indices(self, rng: np.random.Generator, count: int, replace: bool) -> list:
        if self._fits_int64:
            return list(rng.choice(self.size, size=count, replace=replace))
        r = random.Random(int(rng.integers(2**63)))
        if replace:
            return [r.randrange(self.size) for _ in range(count)]
        # size >> count here, so rejection of repeats is cheap
        seen: dict[int, None] = {}
        while len(seen) < min(count, self.size):
            seen.setdefault(r.randrange(self.size))
        return list(seen)

    # -- candidate sets ----------------------------------------------------
    def candidates(self, rng: np.random.Generator | None = None, previous=None) -> np.ndarray:
        """Level vectors to evaluate, ordered by (total power, lexicographic)."""
        if self.exhaustive:
            return self._all
        k = min(self.cap - 1, self.size)
        idx = {0}
        idx.update(int(i) for i in self.random_indices(rng, k, replace=False))
        if previous is not None:
            idx.add(self.rank(previous))
        idx = sorted(idx)
        return self._sorted(self.unrank(idx), idx)

    def all_actions(self) -> np.ndarray:
        if self._all is None:
            raise ValueError("action space is sampled; no full list")
        return self._all


def build_action_space(N: int, p: float, L: int, P_max: float, cap="exhaustive") -> ActionSpace:
    return ActionSpace(N, p, L, P_max, cap)


def is_feasible(levels, L: int, p: float, P_max: float) -> bool:
    levels = np.asarray(levels)
    return bool(np.all((levels >= 0) & (levels <= L))
                and levels.sum() * (p / L) <= P_max * (1 + 1e-12))


def violation_probability(mu, sigma2, d):
    """Pr{X > d} for X ~ N(mu, sigma2): ``0.5 * erfc((d - mu) / sqrt(2 sigma2))``.

    A zero variance gives the step 1{mu > d} (1/2 at mu == d).
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 0.5 * special.erfc((d - mu) / np.sqrt(2.0 * sigma2))
    step = np.where(mu > d, 1.0, np.where(mu < d, 0.0, 0.5))
    out = np.where(sigma2 > 0, p, step)
    return float(out) if out.ndim == 0 else out


def acquisition(mu, sigma2, alpha_c: float, alpha_i: float, d: float):
    """Objective to minimize: ``alpha_c * Pr{AoI > d} - alpha_i * sigma2``."""
    return alpha_c * violation_probability(mu, sigma2, d) - alpha_i * np.asarray(sigma2, dtype=float)


@dataclass
class AgentParams:
    """What an agent needs from the scenario (AoI quantities in ms)."""

    d_ms: float
    L: int
    alpha_c: float
    alpha_i: float
    refit_period: int = 50
    min_fit_size: int = 10
    max_jitter_ratio: float = 1e-2
    fit_restarts: int = 3
    fit_max_evals: int = 200
    bounds: tuple | None = None
    center: bool = False
    objective_scale: float = 1.0  # ms -> unit used inside the acquisition

    @classmethod
    def from_config(cls, cfg, alpha_i: float | None = None) -> "AgentParams":
        lp = cfg.learning
        theta0 = initial_theta(cfg)
        return cls(
            d_ms=cfg.d_ms, L=cfg.L, alpha_c=cfg.alpha_c,
            alpha_i=cfg.alpha_i if alpha_i is None else alpha_i,
            refit_period=lp.refit_period, min_fit_size=lp.min_fit_size,
            max_jitter_ratio=lp.max_jitter_ratio, fit_restarts=lp.fit_restarts,
            fit_max_evals=lp.fit_max_evals,
            bounds=default_bounds(theta0, lp.bound_ratio, lp.jitter_ratio),
            center=lp.center,
            objective_scale=1e-3 if lp.objective_unit == "s" else 1.0,
        )


def initial_theta(cfg) -> KernelHyperparams:
    lp = cfg.learning
    h = cfg.h0_ms
    return KernelHyperparams(h=h, lam=lp.lambda0, nu=lp.nu,
                             sigma_j=math.sqrt(lp.jitter_ratio) * h,
                             standard_scaling=lp.standard_scaling)


@dataclass
class AgentState:
    dataset: SlidingDataset
    theta: KernelHyperparams
    last_action: np.ndarray
    last_delta: float = 0.0
    slots_since_refit: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    fit_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1))
    factor: GramFactor | None = None
    fits: int = 0


class Decision(NamedTuple):
    action: np.ndarray
    posterior: Posterior | None
    refit: bool = False
    fallback: bool = False


def make_input(delta_ms: float, levels, params: AgentParams) -> np.ndarray:
    """GPR input: AoI / d followed by per-RB power / p."""
    levels = np.asarray(levels, dtype=float)
    return np.concatenate(([delta_ms / params.d_ms], levels / params.L))


def new_agent(M: int, theta: KernelHyperparams, init_action, rng=None, fit_rng=None) -> AgentState:
    return AgentState(
        dataset=SlidingDataset(M), theta=theta,
        last_action=np.asarray(init_action, dtype=np.int64), last_delta=0.0,
        rng=rng if rng is not None else np.random.default_rng(0),
        fit_rng=fit_rng if fit_rng is not None else np.random.default_rng(1),
    )


def select_action(agent: AgentState, delta_t: float, space: ActionSpace,
                  params: AgentParams) -> tuple[np.ndarray, Posterior]:
    """Score every candidate with the GPR posterior and return the minimizer.

    Candidates arrive sorted by (total power, lexicographic order), so the
    first minimum is also the tie-break winner.  Objective values that only
    tie because the erfc term rounded to 0 or 1 are separated by the
    standardized margin ``(mu - d) / sigma``, which orders the exact
    probabilities the same way.
    """
    cands = space.candidates(agent.rng, agent.last_action)
    if len(agent.dataset) == 0:
        prior = agent.theta.prior_var
        mu = np.zeros(len(cands))
        var = np.full(len(cands), prior)
    else:
        if agent.factor is None:
            agent.factor = gram(agent.dataset, agent.theta,
                                max_jitter_ratio=params.max_jitter_ratio, center=params.center)
        Xs = np.hstack([np.full((len(cands), 1), delta_t / params.d_ms), cands / params.L])
        mu, var = agent.factor.predict_many(Xs)
    u = params.objective_scale
    obj = acquisition(mu * u, var * (u * u), params.alpha_c, params.alpha_i, params.d_ms * u)
    if params.alpha_c > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            margin = (mu - params.d_ms) / np.sqrt(var)
            margin = np.where(var > 0, margin, np.sign(mu - params.d_ms) * np.inf)
        margin = np.nan_to_num(margin, nan=0.0, posinf=np.inf, neginf=-np.inf)
        best = int(np.lexsort((margin, obj))[0])
    else:
        best = int(np.argmin(obj))
    return cands[best].copy(), Posterior(float(mu[best]), float(var[best]))


def agent_step(agent: AgentState, observed_delta: float, t: int, space: ActionSpace,
               params: AgentParams) -> Decision:
    """One pass of the per-slot learning loop for a single agent.

    Records the transition (previous AoI, previous action) -> observed AoI,
    refits hyperparameters every ``refit_period`` slots, then picks the next
    action.  A singular Gram matrix repeats the previous action.
    """
    if t < 1:
        raise ValueError("agent_step starts at t = 1")
    agent.dataset.push(Sample(make_input(agent.last_delta, agent.last_action, params),
                              observed_delta))
    agent.factor = None
    agent.slots_since_refit += 1
    refit = False
    if agent.slots_since_refit >= params.refit_period and len(agent.dataset) >= params.min_fit_size:
        # first fit uses every restart; later ones warm-start from the last fit only
        restarts = params.fit_restarts if agent.fits == 0 else 1
        res = fit_hyperparams(agent.dataset, agent.theta, params.bounds, restarts=restarts,
                              max_evals=params.fit_max_evals, rng=agent.fit_rng,
                              center=params.center)
        if res.ok:
            agent.theta = res.theta
        agent.slots_since_refit = 0
        agent.fits += 1
        refit = True
    try:
        action, post = select_action(agent, observed_delta, space, params)
        fallback = False
    except SingularKernelError:
        action, post, fallback = agent.last_action.copy(), None, True
    agent.last_action = action
    agent.last_delta = observed_delta
    return Decision(action, post, refit, fallback)


def random_policy(space: ActionSpace, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the whole feasible set."""
    i = space.random_indices(rng, 1, replace=True)[0]
    return np.array(space._unrank_one(int(i)), dtype=np.int64)
