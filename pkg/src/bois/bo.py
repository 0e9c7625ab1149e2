"""A single Bayesian optimizer: LHS design, LCB acquisition with a linear kappa decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .gp import SurrogateModel

N_CANDIDATES = 2048
N_REFINE = 5
REFINE_EVALS = 200
N_ANCHORS = 3
REFIT_EVERY_SMALL = 100  # refit hyperparameters each ingest up to this many points
REFIT_PERIOD = 5


class OptimizerStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundsBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError("bounds need matching, nonempty lo/hi vectors")
        if np.any(lo >= hi):
            raise ValueError("each lower bound must be below its upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def angles(cls, d: int) -> "BoundsBox":
        return cls(np.zeros(d), np.full(d, 2 * math.pi))

    @property
    def d(self) -> int:
        return self.lo.size

    def contains(self, theta) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lo) and np.all(theta <= self.hi))

    def clip(self, theta) -> np.ndarray:
        return np.clip(theta, self.lo, self.hi)

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((size, self.d))


def lhs_sample(M: int, bounds: BoundsBox, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube: one point per stratum in every dimension, strata shuffled per dimension."""
    if M < 1:
        raise ValueError("need at least one sample")
    u = np.empty((M, bounds.d))
    for j in range(bounds.d):
        u[:, j] = (rng.permutation(M) + rng.random(M)) / M
    return bounds.clip(bounds.lo + u * (bounds.hi - bounds.lo))


def kappa(t: int, N: int, kappa0: float) -> float:
    """kappa_t = kappa0 (N - t) / N, for t in [1, N]."""
    if not 1 <= t <= N:
        raise ValueError(f"iteration {t} outside [1, {N}]")
    return kappa0 * (N - t) / N


def acquisition_lcb(model: SurrogateModel, theta, kappa_value: float):
    """mu - kappa * sigma; vectorized over rows when ``theta`` is 2-D."""
    if kappa_value < 0:
        raise ValueError("kappa must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    mu, var = model.predict_many(theta.reshape(-1, model.dim))
    acq = mu if kappa_value == 0 else mu - kappa_value * np.sqrt(var)
    return acq if theta.ndim == 2 else float(acq[0])


def batched_nelder_mead(f, starts: np.ndarray, bounds: BoundsBox, max_evals: int, step: float = 0.05):
    """Nelder-Mead from several starts in lockstep, confined to the box.

    ``f`` maps an (m, d) array to m values; each simplex spends at most
    ``max_evals`` evaluations.  Trial points outside the box score +inf, so the
    simplex contracts back inside rather than collapsing onto a face (which
    clipping would do).  Returns the best vertex and value per start.
    """
    k, d = starts.shape

    def feval(X):
        inside = np.all((X >= bounds.lo) & (X <= bounds.hi), axis=1)
        out = np.full(len(X), np.inf)
        if inside.any():
            out[inside] = f(X[inside])
        return out

    offsets = step * (bounds.hi - bounds.lo)
    simp = np.repeat(bounds.clip(starts)[:, None, :], d + 1, axis=1)
    for j in range(d):
        simp[:, j + 1, j] += np.where(simp[:, 0, j] + offsets[j] <= bounds.hi[j], offsets[j], -offsets[j])
    fs = feval(simp.reshape(-1, d)).reshape(k, d + 1)
    evals = d + 1
    rows = np.arange(k)
    while evals + 2 <= max_evals:
        order = np.argsort(fs, axis=1, kind="stable")
        simp = simp[rows[:, None], order]
        fs = fs[rows[:, None], order]
        centroid = simp[:, :-1].mean(axis=1)
        worst = simp[:, -1]
        xr = centroid + (centroid - worst)
        fr = feval(xr)
        evals += 1
        expand = fr < fs[:, 0]
        inside = (fr >= fs[:, 0]) & (fr < fs[:, -2])
        contract = fr >= fs[:, -2]
        # expansion and contraction share one batched evaluation
        x2 = np.where(
            expand[:, None],
            centroid + 2.0 * (xr - centroid),
            np.where((fr < fs[:, -1])[:, None], centroid + 0.5 * (xr - centroid), centroid + 0.5 * (worst - centroid)),
        )
        need = expand | contract
        f2 = np.full(k, np.inf)
        if need.any():
            f2[need] = feval(x2[need])
            evals += 1
        new_x, new_f = simp[:, -1].copy(), fs[:, -1].copy()
        take = inside
        new_x[take], new_f[take] = xr[take], fr[take]
        take = expand & (f2 < fr)
        new_x[take], new_f[take] = x2[take], f2[take]
        take = expand & ~(f2 < fr)
        new_x[take], new_f[take] = xr[take], fr[take]
        accepted = contract & (f2 < np.minimum(fr, fs[:, -1]))
        new_x[accepted], new_f[accepted] = x2[accepted], f2[accepted]
        simp[:, -1], fs[:, -1] = new_x, new_f
        shrink = contract & ~accepted
        if shrink.any():
            if evals + d > max_evals:
                break
            idx = rows[shrink]
            simp[idx, 1:] = simp[idx, :1] + 0.5 * (simp[idx, 1:] - simp[idx, :1])
            fs[idx, 1:] = feval(simp[idx, 1:].reshape(-1, d)).reshape(len(idx), d)
            evals += d
    best = np.argmin(fs, axis=1)
    return simp[rows, best], fs[rows, best]


def minimize_lcb(
    model: SurrogateModel, bounds: BoundsBox, kappa_value: float, rng: np.random.Generator, anchors=None
) -> np.ndarray:
    """Best of uniform candidates, refined by bounded Nelder-Mead from the top few.

    ``anchors`` (e.g. the best observed points) join the candidate pool.
    """
    if kappa_value < 0:
        raise ValueError("kappa must be nonnegative")
    cands = bounds.uniform(rng, N_CANDIDATES)
    if anchors is not None and len(anchors):
        cands = np.vstack([cands, bounds.clip(np.asarray(anchors, dtype=float))])
    vals = acquisition_lcb(model, cands, kappa_value)
    order = np.argsort(vals, kind="stable")[:N_REFINE]
    predict = model.predictor()

    def lcb(X):
        mu, var = predict(X)
        return mu - kappa_value * np.sqrt(var)

    xs, fs = batched_nelder_mead(lcb, cands[order], bounds, REFINE_EVALS)
    i = int(np.argmin(fs))
    if fs[i] < vals[order[0]]:
        return xs[i]
    return cands[order[0]]


@dataclass
class BayesOptimizer:
    """Optimizer state for one grid point's cost function.

    ``t`` counts completed iterations; the proposal for iteration ``t + 1``
    uses ``kappa(t + 1, N, kappa0)``.
    """

    bounds: BoundsBox
    n_iter: int
    kappa0: float = 2.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    fixed_noise: float | None = None
    t: int = 0
    X: list = field(default_factory=list)
    y: list = field(default_factory=list)
    model: SurrogateModel | None = None
    n_fits: int = 0
    stale: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("need at least one iteration")
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")

    @property
    def n_data(self) -> int:
        return len(self.y)

    def current_kappa(self) -> float:
        return kappa(self.t + 1, self.n_iter, self.kappa0)

    def propose(self) -> np.ndarray:
        if not self.y:
            raise OptimizerStateError("no data; ingest before proposing")
        if self.t >= self.n_iter:
            raise OptimizerStateError("all iterations used")
        return minimize_lcb(self.refresh(), self.bounds, self.current_kappa(), self.rng, self.anchors())

    def anchors(self) -> np.ndarray:
        """The N_ANCHORS lowest-cost stored points, seeding the acquisition search."""
        order = np.argsort(self.y, kind="stable")[:N_ANCHORS]
        return np.array([self.X[i] for i in order])

    def ingest(self, records) -> "BayesOptimizer":
        """Append ``(theta, cost)`` pairs; the surrogate is refreshed lazily."""
        records = list(records)
        for theta, cost in records:
            theta = np.asarray(theta, dtype=float).reshape(-1)
            if theta.shape != (self.bounds.d,):
                raise ValueError(f"theta has {theta.size} entries, expected {self.bounds.d}")
            if not math.isfinite(cost):
                raise ValueError(f"non-finite cost {cost!r}")
            if not self.bounds.contains(theta):
                raise ValueError("theta outside the bounds box")
            self.X.append(theta)
            self.y.append(float(cost))
        if records:
            self.stale = True
        return self

    def refresh(self) -> SurrogateModel:
        """Bring the surrogate up to date with the data and return it.

        Hyperparameters are refitted whenever the dataset is small, and every
        REFIT_PERIOD-th iteration after that; in between the previous
        hyperparameters are kept and only the factorization is redone.
        """
        if self.stale or self.model is None:
            self._update_model()
            self.stale = False
        return self.model

    def _update_model(self):
        X, y = np.array(self.X), np.array(self.y)
        if len(y) < 2:
            self.model = gp.build_model(X, y, gp.KernelParams(1.0, 1.0, self.fixed_noise or 1e-6))
            return
        if self.model is None or self.model.n_data < 2 or len(y) <= REFIT_EVERY_SMALL or self.t % REFIT_PERIOD == 0:
            self.model = gp.fit(X, y, self.fixed_noise, rng=self.rng)
            self.n_fits += 1
        else:
            self.model = gp.refactor(self.model, X, y)

    def best_point(self) -> tuple[np.ndarray, float]:
        """Stored pair with the lowest cost; earliest wins ties."""
        if not self.y:
            raise OptimizerStateError("no data")
        i = int(np.argmin(self.y))
        return self.X[i].copy(), self.y[i]


def lhs_then_bo(f, bounds: BoundsBox, M: int, N: int, rng: np.random.Generator, kappa0: float = 2.0, fixed_noise=None):
    """Plain single-task BO on a deterministic objective; returns the optimizer."""
    opt = BayesOptimizer(bounds, N, kappa0, rng, fixed_noise)
    init = lhs_sample(M, bounds, rng)
    opt.ingest((x, f(x)) for x in init)
    for _ in range(N):
        x = opt.propose()
        opt.ingest([(x, f(x))])
        opt.t += 1
    return opt
