"""Array of Bayesian optimizers over a physical grid, sharing Pauli measurements.

Each iteration every optimizer proposes a parameter point, the full Pauli set
is measured once there, and the resulting expectation vector is converted
into costs for the proposing optimizer and all of its neighbours.  Proposals
are made against the models from the end of the previous iteration, so the
outcome does not depend on how the per-optimizer work is scheduled.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bo import BayesOptimizer, BoundsBox, lhs_sample
from .circuit import AnsatzCircuit, ExpectationSet, measure, simulate
from .exact import MAX_DENSE_QUBITS, exact_energies
from .pauli import ParameterizedHamiltonian, PhysicalGrid

log = logging.getLogger(__name__)

INDEPENDENT = "independent"
INDEPENDENT_RANDOM = "independent_random"
NEAREST_NEIGHBOUR = "nearest_neighbour"
ALL_TO_ALL = "all_to_all"
STRATEGIES = (INDEPENDENT, INDEPENDENT_RANDOM, NEAREST_NEIGHBOUR, ALL_TO_ALL)

EXACT_NOISE = 1e-8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SharingTopology:
    variant: str
    grid: PhysicalGrid
    extra: int = 0

    def __post_init__(self):
        if self.variant not in STRATEGIES:
            raise ConfigError(f"unknown sharing strategy {self.variant!r}; choose from {STRATEGIES}")
        if self.extra < 0:
            raise ConfigError("extra evaluations must be nonnegative")

    @property
    def shares(self) -> bool:
        return self.variant in (NEAREST_NEIGHBOUR, ALL_TO_ALL)

    @property
    def extras_per_iteration(self) -> int:
        return self.extra if self.variant == INDEPENDENT_RANDOM else 0

    def neighbours(self, alpha: int) -> list[int]:
        """Grid points (other than ``alpha``) that receive its cross-evaluations."""
        size = self.grid.size
        if self.variant == ALL_TO_ALL:
            return [b for b in range(size) if b != alpha]
        if self.variant != NEAREST_NEIGHBOUR:
            return []
        idx = self.grid.index(alpha)
        out = []
        for axis in range(self.grid.dims):
            for step in (-1, 1):
                j = list(idx)
                j[axis] += step
                if 0 <= j[axis] < self.grid.shape[axis]:
                    out.append(self.grid.flat_index(j))
        return sorted(out)


@dataclass
class RunConfig:
    hamiltonian: ParameterizedHamiltonian
    ansatz: AnsatzCircuit
    strategy: str = NEAREST_NEIGHBOUR
    extra: int = 2
    M: int = 10
    N: int = 30
    kappa0: float = 2.0
    shots_opt: int = 1024
    shots_final: int = 8192
    exact: bool = False
    seed: int = 0
    repetition: int = 0
    fixed_noise: float | None = None

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ConfigError("need M >= 1 initial points and N >= 1 iterations")
        if self.shots_opt < 1 or self.shots_final < 1:
            raise ConfigError("shot counts must be positive")
        if self.kappa0 <= 0:
            raise ConfigError("kappa0 must be positive")
        if self.ansatz.n != self.hamiltonian.n:
            raise ConfigError(
                f"ansatz acts on {self.ansatz.n} qubits but the Hamiltonian on {self.hamiltonian.n}"
            )
        if self.ansatz.d < 1:
            raise ConfigError("ansatz has no free parameters")
        self.topology = SharingTopology(self.strategy, self.hamiltonian.grid, self.extra)

    @property
    def noise(self) -> float | None:
        if self.fixed_noise is not None:
            return self.fixed_noise
        return EXACT_NOISE if self.exact else None


@dataclass
class EvaluationRecord:
    theta: np.ndarray
    expectations: ExpectationSet
    origin: int
    iteration: int
    kind: str  # "init", "proposal", "extra" or "final"

    @property
    def shots(self):
        return self.expectations.shots


@dataclass
class RunResult:
    grid_points: list
    energies: np.ndarray
    thetas: np.ndarray
    best_observed: np.ndarray
    traces: np.ndarray
    total_evaluations: int
    initial_evaluations: int
    seen_per_optimizer: list
    hyperparameters: list
    exact_energies: np.ndarray | None = None
    config_summary: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray | None:
        return None if self.exact_energies is None else self.energies - self.exact_energies

    def to_dict(self) -> dict:
        doc = {
            "config": self.config_summary,
            "ledger": {
                "total_evaluations": self.total_evaluations,
                "initial_evaluations": self.initial_evaluations,
                "seen_per_optimizer": list(self.seen_per_optimizer),
            },
            "points": [],
        }
        for a, x in enumerate(self.grid_points):
            row = {
                "alpha": a,
                "x": list(x),
                "energy": float(self.energies[a]),
                "best_observed": float(self.best_observed[a]),
                "theta": [float(v) for v in self.thetas[a]],
                "trace": [float(v) for v in self.traces[a]],
                "hyperparameters": self.hyperparameters[a],
            }
            if self.exact_energies is not None:
                row["exact_energy"] = float(self.exact_energies[a])
                row["error"] = float(self.errors[a])
            doc["points"].append(row)
        return doc


def streams(seed: int, n_optimizers: int, repetition: int = 0) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """One stream for shared initialization plus one per optimizer."""
    ss = np.random.SeedSequence(seed, spawn_key=(repetition,))
    children = ss.spawn(n_optimizers + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


def _propose(opt: BayesOptimizer):
    theta = opt.propose()
    return theta, opt


def _hyper(opt: BayesOptimizer) -> dict:
    """Hyperparameters of the surrogate behind the optimizer's latest proposal."""
    p = opt.model.params
    return {
        "t": opt.t + 1,
        "n_data": opt.n_data,
        "signal_variance": p.signal_variance,
        "lengthscale": p.lengthscale,
        "noise_variance": p.noise_variance,
        "target_scale": opt.model.y_scale,
    }


class BOISRun:
    """Mutable run state: optimizers, evaluation ledger and per-iteration traces."""

    def __init__(self, config: RunConfig, workers: int = 1):
        self.config = config
        self.workers = max(1, int(workers))
        self.H = config.hamiltonian
        self.topology = config.topology
        self.bounds = BoundsBox.angles(config.ansatz.d)
        self.t = 0
        self.ledger: list[EvaluationRecord] = []
        self.final_records: list[EvaluationRecord] = []
        self.init_rng, rngs = streams(config.seed, self.H.grid.size, config.repetition)
        self.optimizers = [
            BayesOptimizer(self.bounds, config.N, config.kappa0, rng, config.noise) for rng in rngs
        ]
        self.traces: list[list[float]] = [[] for _ in rngs]
        self.hyper_log: list[list[dict]] = [[] for _ in rngs]
        self._pool = None
        self.initialize()

    # -- measurement backend --

    def evaluate(self, theta, rng: np.random.Generator, shots: int | None = None) -> ExpectationSet:
        state = simulate(self.config.ansatz, theta)
        if self.config.exact:
            return measure(state, self.H.paulis)
        return measure(state, self.H.paulis, shots or self.config.shots_opt, rng)

    def _map(self, fn, *iterables):
        if self.workers == 1:
            return list(map(fn, *iterables))
        if self._pool is None:
            self._pool = ProcessPoolExecutor(self.workers)
        return list(self._pool.map(fn, *iterables))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # -- protocol --

    def initialize(self):
        cfg = self.config
        size = self.H.grid.size
        incoming: list[list] = [[] for _ in range(size)]
        if self.topology.shares:
            for theta in lhs_sample(cfg.M, self.bounds, self.init_rng):
                rec = EvaluationRecord(theta, self.evaluate(theta, self.init_rng), -1, 0, "init")
                self.ledger.append(rec)
                energies = self.H.energies(rec.expectations)
                for a in range(size):
                    incoming[a].append((theta, float(energies[a])))
        else:
            for a, opt in enumerate(self.optimizers):
                for theta in lhs_sample(cfg.M, self.bounds, opt.rng):
                    rec = EvaluationRecord(theta, self.evaluate(theta, opt.rng), a, 0, "init")
                    self.ledger.append(rec)
                    incoming[a].append((theta, self.H.energy(a, rec.expectations)))
        for opt, records in zip(self.optimizers, incoming):
            opt.ingest(records)
        self._record_progress()

    def iterate(self):
        cfg = self.config
        if self.t >= cfg.N:
            raise RuntimeError("run already finished")
        size = self.H.grid.size
        t = self.t + 1
        proposals = self._map(_propose, self.optimizers)
        self.optimizers = [opt for _, opt in proposals]
        incoming: list[list] = [[] for _ in range(size)]
        for a, (theta, opt) in enumerate(proposals):
            self.hyper_log[a].append(_hyper(opt))
            rec = EvaluationRecord(theta, self.evaluate(theta, opt.rng), a, t, "proposal")
            self.ledger.append(rec)
            for b in sorted([a] + self.topology.neighbours(a)):
                incoming[b].append((a, theta, self.H.energy(b, rec.expectations)))
        for a, opt in enumerate(self.optimizers):
            incoming[a] = [(theta, c) for _, theta, c in sorted(incoming[a], key=lambda r: r[0])]
            for _ in range(self.topology.extras_per_iteration):
                theta = self.bounds.uniform(opt.rng, 1)[0]
                rec = EvaluationRecord(theta, self.evaluate(theta, opt.rng), a, t, "extra")
                self.ledger.append(rec)
                incoming[a].append((theta, self.H.energy(a, rec.expectations)))
        for opt, records in zip(self.optimizers, incoming):
            opt.ingest(records)
        for opt in self.optimizers:
            opt.t = t
        self.t = t
        self._record_progress()

    def _record_progress(self):
        for a, opt in enumerate(self.optimizers):
            self.traces[a].append(min(opt.y))

    def finalize(self) -> RunResult:
        cfg = self.config
        if self.t != cfg.N:
            raise RuntimeError(f"finalize called after {self.t} of {cfg.N} iterations")
        size = self.H.grid.size
        energies = np.empty(size)
        best_obs = np.empty(size)
        thetas = np.empty((size, cfg.ansatz.d))
        for a, opt in enumerate(self.optimizers):
            theta, cost = opt.best_point()
            rec = EvaluationRecord(theta, self.evaluate(theta, opt.rng, cfg.shots_final), a, cfg.N, "final")
            self.final_records.append(rec)
            energies[a] = self.H.energy(a, rec.expectations)
            best_obs[a] = cost
            thetas[a] = theta
        exact = exact_energies(self.H) if self.H.n <= MAX_DENSE_QUBITS else None
        return RunResult(
            grid_points=self.H.grid.points(),
            energies=energies,
            thetas=thetas,
            best_observed=best_obs,
            traces=np.array(self.traces),
            total_evaluations=len(self.ledger),
            initial_evaluations=sum(r.kind == "init" for r in self.ledger),
            seen_per_optimizer=[opt.n_data for opt in self.optimizers],
            hyperparameters=self.hyper_log,
            exact_energies=exact,
            config_summary=summarize_config(cfg),
        )

    def run(self) -> RunResult:
        try:
            while self.t < self.config.N:
                self.iterate()
                log.debug("iteration %d/%d done", self.t, self.config.N)
            return self.finalize()
        finally:
            self.close()


def summarize_config(cfg: RunConfig) -> dict:
    return {
        "strategy": cfg.strategy,
        "extra": cfg.extra if cfg.strategy == INDEPENDENT_RANDOM else 0,
        "M": cfg.M,
        "N": cfg.N,
        "kappa0": cfg.kappa0,
        "backend": "exact" if cfg.exact else "shots",
        "shots_opt": None if cfg.exact else cfg.shots_opt,
        "shots_final": None if cfg.exact else cfg.shots_final,
        "seed": cfg.seed,
        "repetition": cfg.repetition,
        "n_qubits": cfg.hamiltonian.n,
        "n_params": cfg.ansatz.d,
        "grid_size": cfg.hamiltonian.grid.size,
    }


def expected_evaluations(cfg: RunConfig) -> int:
    """Circuit-set evaluations excluding final re-measurement."""
    size = cfg.hamiltonian.grid.size
    init = cfg.M if cfg.topology.shares else cfg.M * size
    return init + cfg.N * size * (1 + cfg.topology.extras_per_iteration)


def run(config: RunConfig, workers: int = 1) -> RunResult:
    return BOISRun(config, workers).run()


def compare_strategies(config: RunConfig, strategies, repetitions: int, workers: int = 1, progress=None) -> dict:
    """Final errors E* - E_exact per strategy, shape (repetitions, grid size)."""
    out = {}
    for strategy in strategies:
        errs = []
        for r in range(repetitions):
            cfg = replace(config, strategy=strategy, repetition=r)
            res = run(cfg, workers)
            errs.append(res.errors)
            if progress:
                progress(strategy, r, res)
        size = config.hamiltonian.grid.size
        out[strategy] = np.array(errs).reshape(repetitions, size)
    return out


QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


def summarize_errors(errors: np.ndarray) -> dict:
    """Per-point and aggregate mean/median/quantiles of an error table."""
    if errors.size == 0:
        return {"per_point": [], "aggregate": {}}

    def stats(v):
        v = np.asarray(v, dtype=float).ravel()
        d = {"mean": float(np.mean(v)), "median": float(np.median(v))}
        for q in QUANTILES:
            d[f"q{int(round(q * 100)):02d}"] = float(np.quantile(v, q))
        return d

    return {
        "per_point": [stats(errors[:, a]) for a in range(errors.shape[1])],
        "aggregate": stats(errors),
    }

