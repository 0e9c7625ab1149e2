"""Gaussian-process regression with an isotropic Matern-5/2 kernel.

Targets are standardized (mean removed, divided by their standard deviation)
before fitting, so the kernel hyperparameters held by a model live in
standardized units; predictions are returned in the original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sl
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs, dtrtri
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2 * math.pi)

PARAM_BOUNDS = (1e-6, 1e6)
NOISE_BOUNDS = (1e-10, 1e6)
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
SCALE_FLOOR = 1e-12


class DegenerateDataError(ValueError):
    """The training data admit no well-posed GP factorization."""


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float = 1.0
    lengthscale: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if not (self.signal_variance > 0 and self.lengthscale > 0 and self.noise_variance >= 0):
            raise ValueError(f"invalid kernel parameters {self}")
        if not all(map(math.isfinite, (self.signal_variance, self.lengthscale, self.noise_variance))):
            raise ValueError(f"non-finite kernel parameters {self}")


def matern52(r, params: KernelParams):
    """sigma_f^2 (1 + sqrt5 r/l + 5 r^2 / 3 l^2) exp(-sqrt5 r/l)."""
    s = SQRT5 * np.asarray(r, dtype=float) / params.lengthscale
    return params.signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel_matrix(A: np.ndarray, B: np.ndarray, params: KernelParams) -> np.ndarray:
    return matern52(cdist(A, B), params)


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    """A factorized GP posterior; immutable once built."""

    inputs: np.ndarray
    targets: np.ndarray
    params: KernelParams
    y_mean: float
    y_scale: float
    chol: np.ndarray | None = field(repr=False)
    alpha_vec: np.ndarray | None = field(repr=False)
    jitter: float = 0.0
    fit_info: dict = field(default_factory=dict, repr=False)

    @classmethod
    def prior(cls, d: int, params: KernelParams = KernelParams()) -> "SurrogateModel":
        return cls(np.empty((0, d)), np.empty(0), params, 0.0, 1.0, None, None)

    @property
    def n_data(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def prior_variance(self) -> float:
        """Signal plus noise variance in the units of the targets."""
        return self.y_scale**2 * (self.params.signal_variance + self.params.noise_variance)

    @property
    def standardized_targets(self) -> np.ndarray:
        return (self.targets - self.y_mean) / self.y_scale

    def _inv_chol(self) -> np.ndarray:
        cached = self.fit_info.get("_inv_chol")
        if cached is None:
            cached, info = dtrtri(self.chol, lower=1)
            if info != 0:
                raise DegenerateDataError("singular Cholesky factor")
            self.fit_info["_inv_chol"] = cached
        return cached

    def predictor(self):
        """A function X -> (mean, variance) with the per-model constants folded in.

        Built once per model and cached; the acquisition search calls it
        thousands of times on a handful of rows.
        """
        cached = self.fit_info.get("_predictor")
        if cached is not None:
            return cached
        p = self.params
        y_mean, var_scale = self.y_mean, self.y_scale**2
        if self.n_data == 0:
            prior_var = var_scale * p.signal_variance

            def f(X):
                return np.full(len(X), y_mean), np.full(len(X), prior_var)

        else:
            Z = self.inputs * (SQRT5 / p.lengthscale)
            w = self.alpha_vec * (self.y_scale * p.signal_variance)
            B = (p.signal_variance * self._inv_chol()).T.copy()
            sf2 = p.signal_variance

            def f(X):
                s = cdist(X * (SQRT5 / p.lengthscale), Z)
                R = (1.0 + s + s * s / 3.0) * np.exp(-s)
                v = R @ B
                var = sf2 - (v * v).sum(axis=1)
                return y_mean + R @ w, var_scale * np.maximum(var, 0.0)

        self.fit_info["_predictor"] = f
        return f

    def __getstate__(self):
        # the cached predictor is a closure; rebuild it after unpickling
        state = dict(self.__dict__)
        state["fit_info"] = {k: v for k, v in self.fit_info.items() if k != "_predictor"}
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent-function variance at the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        return self.predictor()(X)

    def predict(self, theta) -> tuple[float, float]:
        mu, var = self.predict_many(np.asarray(theta, dtype=float).reshape(1, -1))
        return float(mu[0]), float(var[0])

    def log_marginal_likelihood(self) -> float:
        """LML of the standardized targets under the model's kernel parameters."""
        if self.n_data == 0:
            return 0.0
        y = self.standardized_targets
        return _lml_from_factor(self.chol, self.alpha_vec, y)


def _lml_from_factor(L, alpha_vec, y) -> float:
    M = len(y)
    return float(-0.5 * y @ alpha_vec - np.sum(np.log(np.diag(L))) - 0.5 * M * LOG_2PI)


def _factorize(R: np.ndarray, params: KernelParams):
    """Cholesky of sigma_f^2 R + sigma_n^2 I, escalating diagonal jitter on failure."""
    K = params.signal_variance * R
    K[np.diag_indices_from(K)] += params.noise_variance
    for jitter in JITTERS:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return sl.cholesky(Kj, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            continue
    raise DegenerateDataError("kernel matrix is not positive definite even with maximum jitter")


def _correlation(X: np.ndarray, lengthscale: float, dists: np.ndarray | None = None) -> np.ndarray:
    if dists is None:
        dists = cdist(X, X)
    return matern52(dists, KernelParams(1.0, lengthscale, 0.0))


def _standardize(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    scale = float(np.std(y))
    return mean, scale if scale >= SCALE_FLOOR else 1.0


def _check_conflicting_duplicates(X, y, tol=1e-10):
    _, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(np.unique(inverse)) == len(X):
        return
    for g in np.unique(inverse):
        vals = y[inverse == g]
        if vals.max() - vals.min() > tol * max(1.0, np.abs(vals).max()):
            raise DegenerateDataError("identical inputs with different targets and zero noise")


def build_model(inputs, targets, params: KernelParams, *, y_mean=None, y_scale=None, dists=None) -> SurrogateModel:
    """Factorize the GP for fixed hyperparameters (standardized units)."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError("inputs and targets differ in length")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if y_mean is None:
        y_mean, y_scale = _standardize(y)
    if params.noise_variance == 0.0:
        _check_conflicting_duplicates(X, y)
    ys = (y - y_mean) / y_scale
    L, jitter = _factorize(_correlation(X, params.lengthscale, dists), params)
    alpha_vec = sl.cho_solve((L, True), ys, check_finite=False)
    return SurrogateModel(X, y, params, y_mean, y_scale, L, alpha_vec, jitter)


def _neg_lml_and_grad(logp, dists, ys, fixed_noise):
    """Negative LML and its gradient in log-parameter space."""
    sf2, ell = math.exp(logp[0]), math.exp(logp[1])
    sn2 = fixed_noise if fixed_noise is not None else math.exp(logp[2])
    M = len(ys)
    s = dists * (SQRT5 / ell)
    e = np.exp(-s)
    q = s * s
    q *= e
    q /= 3.0  # s^2 e / 3
    s += 1.0
    K = s * e
    K += q
    K *= sf2
    K.flat[:: M + 1] += sn2
    added = 0.0
    for jitter in JITTERS:
        K.flat[:: M + 1] += jitter - added
        added = jitter
        L, info = dpotrf(K, lower=1, clean=1)
        if info == 0:
            break
    else:
        return 1e25, np.zeros_like(logp)
    a, _ = dpotrs(L, ys, lower=1)
    ya = ys @ a
    f = 0.5 * ya + np.log(np.diag(L)).sum() + 0.5 * M * LOG_2PI
    # dLML/dp = (a^T dK a - tr(K^-1 dK)) / 2.  potri leaves the upper triangle
    # zeroed, so tr(K^-1 dK) = 2 <tril(K^-1), dK> - diag terms.
    Kinv, _ = dpotri(L, lower=1)
    tr_kinv = np.trace(Kinv)
    aa = a @ a
    diag_noise = sn2 + added
    grad = np.empty_like(logp)
    # dK/dlog sf2 = K - diag_noise I, and K a = y, K^-1 K = I
    grad[0] = 0.5 * ((ya - diag_noise * aa) - (M - diag_noise * tr_kinv))
    q *= s  # dK/dlog ell divided by sf2; zero on the diagonal
    grad[1] = 0.5 * sf2 * (a @ q @ a - 2.0 * np.vdot(Kinv, q))
    if fixed_noise is None:
        grad[2] = 0.5 * sn2 * (aa - tr_kinv)
    return f, -grad


def fit(
    inputs,
    targets,
    fixed_noise: float | None = None,
    *,
    rng: np.random.Generator | None = None,
    n_starts: int = 5,
    max_iter: int = 60,
) -> SurrogateModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Bounded quasi-Newton search in log-space (analytic gradients) from
    ``n_starts`` log-uniform starting points.  ``fixed_noise`` pins sigma_n^2
    (standardized units) instead of fitting it.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(y) < 2:
        raise ValueError("fit needs at least two training points")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("inputs and targets must be finite")
    rng = np.random.default_rng(0) if rng is None else rng
    y_mean, y_scale = _standardize(y)
    ys = (y - y_mean) / y_scale
    dists = cdist(X, X)
    if fixed_noise == 0.0:
        _check_conflicting_duplicates(X, y)

    pos = dists[np.triu_indices(len(X), 1)]
    pos = pos[pos > 0]
    spread = float(np.median(pos)) if len(pos) else 1.0
    bounds = [tuple(map(math.log, PARAM_BOUNDS))] * 2
    if fixed_noise is None:
        bounds.append(tuple(map(math.log, NOISE_BOUNDS)))

    starts = []
    for _ in range(n_starts):
        s = [rng.uniform(math.log(0.1), math.log(10.0)), rng.uniform(math.log(0.1 * spread), math.log(2.0 * spread))]
        if fixed_noise is None:
            s.append(rng.uniform(math.log(1e-6), math.log(1e-1)))
        starts.append(np.array(s))

    best_x, best_f = None, np.inf
    start_lml = []
    for s in starts:
        f0, _ = _neg_lml_and_grad(s, dists, ys, fixed_noise)
        start_lml.append(-f0)
        res = minimize(
            _neg_lml_and_grad,
            s,
            args=(dists, ys, fixed_noise),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iter, "ftol": 1e-8, "gtol": 1e-4},
        )
        x, f = (res.x, float(res.fun)) if res.fun <= f0 else (s, f0)
        if f < best_f:
            best_x, best_f = x, f
    if best_x is None or not np.isfinite(best_f) or best_f >= 1e25:
        raise DegenerateDataError("no hyperparameters give a factorizable kernel matrix")

    params = KernelParams(
        math.exp(best_x[0]),
        math.exp(best_x[1]),
        fixed_noise if fixed_noise is not None else math.exp(best_x[2]),
    )
    model = build_model(X, y, params, y_mean=y_mean, y_scale=y_scale, dists=dists)
    model.fit_info.update(start_lml=start_lml, lml=model.log_marginal_likelihood())
    return model


def refactor(model: SurrogateModel, inputs, targets) -> SurrogateModel:
    """Same hyperparameters, new data (re-standardized)."""
    return build_model(inputs, targets, model.params)


def predict(model: SurrogateModel, theta) -> tuple[float, float]:
    return model.predict(theta)


def log_marginal_likelihood(model: SurrogateModel) -> float:
    return model.log_marginal_likelihood()


def with_params(model: SurrogateModel, **changes) -> SurrogateModel:
    return build_model(model.inputs, model.targets, replace(model.params, **changes))
