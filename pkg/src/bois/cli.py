"""Command-line entry point: build-ansatz, run, compare, exact.

Every command reads one JSON config.  Relative paths inside it are resolved
against the config file's directory.  Data files carry no timestamps, so a
fixed seed reproduces them byte for byte at any worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ansatz import CONST_TOL, RESTARTS, ConnectivityGraph, build_ansatz
from .circuit import AnsatzCircuit, load_ansatz_file, save_ansatz_file
from .exact import MAX_DENSE_QUBITS, dense_matrix, exact_energies, ground_state, spectral_gap
from .orchestrator import (
    INDEPENDENT_RANDOM,
    STRATEGIES,
    ConfigError,
    RunConfig,
    compare_strategies,
    run,
    summarize_errors,
)
from .pauli import (
    HamiltonianFormatError,
    ParameterizedHamiltonian,
    PhysicalGrid,
    build_spin_chain,
    hamiltonian_from_dict,
    load_hamiltonian_file,
)

log = logging.getLogger("bois")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG = 0, 1, 2
FLOAT_FMT = "%.12g"
BUILTIN_ANSATZ = {"spin_chain_4q": "spin_chain_4q_ansatz.json"}
DEGENERATE_GAP = 1e-8

RUN_KEYS = {"strategy", "extra", "M", "N", "kappa0", "shots_opt", "shots_final", "seed", "fixed_noise"}
KNOWN_KEYS = RUN_KEYS | {"hamiltonian", "ansatz", "backend", "strategies", "repetitions", "output", "build"}


def fmt(x) -> str:
    return FLOAT_FMT % x


# --- config ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    raw: dict
    base: Path

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        unknown = sorted(set(raw) - KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        return cls(raw, path.parent)

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base / p

    @property
    def exact(self) -> bool:
        backend = self.raw.get("backend", "exact")
        if backend not in ("exact", "shots"):
            raise ConfigError(f"backend must be 'exact' or 'shots', got {backend!r}")
        return backend == "exact"

    def hamiltonian(self, key_doc=None) -> ParameterizedHamiltonian:
        doc = self.raw.get("hamiltonian") if key_doc is None else key_doc
        if doc is None:
            raise ConfigError("config needs a 'hamiltonian' entry")
        return hamiltonian_spec(doc, self)

    def ansatz(self) -> AnsatzCircuit:
        spec = self.raw.get("ansatz")
        if spec is None:
            raise ConfigError("config needs an 'ansatz' entry (file path or {'builtin': name})")
        if isinstance(spec, dict) and "builtin" in spec:
            name = spec["builtin"]
            if name not in BUILTIN_ANSATZ:
                raise ConfigError(f"unknown builtin ansatz {name!r}; choose from {sorted(BUILTIN_ANSATZ)}")
            with resources.as_file(resources.files("bois") / "data" / BUILTIN_ANSATZ[name]) as p:
                return load_ansatz_file(p)
        if not isinstance(spec, str):
            raise ConfigError("'ansatz' must be a file path or {'builtin': name}")
        path = self.resolve(spec)
        if not path.exists():
            raise ConfigError(f"ansatz file {path} does not exist")
        try:
            return load_ansatz_file(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def run_config(self, seed_override=None, strategy=None) -> RunConfig:
        kwargs = {k: self.raw[k] for k in RUN_KEYS if k in self.raw}
        if seed_override is not None:
            kwargs["seed"] = seed_override
        if strategy is not None:
            kwargs["strategy"] = strategy
        try:
            return RunConfig(self.hamiltonian(), self.ansatz(), exact=self.exact, **kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad run settings: {exc}") from exc

    def output_dir(self, override=None) -> Path:
        out = Path(override) if override else self.resolve(self.raw.get("output", "results"))
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable ({exc.strerror})") from exc
        return out


def _axis(spec, name):
    if isinstance(spec, (int, float)):
        return PhysicalGrid(((float(spec),),), (name,))
    if isinstance(spec, dict) and {"start", "stop", "num"} <= set(spec):
        return PhysicalGrid.linspace(spec["start"], spec["stop"], int(spec["num"]), name)
    if isinstance(spec, list):
        return PhysicalGrid((tuple(spec),), (name,))
    raise ConfigError(f"axis {name!r}: expected a number, a list, or {{start, stop, num}}")


def hamiltonian_spec(doc, cfg: ExperimentConfig) -> ParameterizedHamiltonian:
    """A Hamiltonian from a file path, an inline document, or the spin-chain generator."""
    try:
        if isinstance(doc, str):
            path = cfg.resolve(doc)
            if not path.exists():
                raise ConfigError(f"Hamiltonian file {path} does not exist")
            return load_hamiltonian_file(path)
        if not isinstance(doc, dict):
            raise ConfigError("'hamiltonian' must be a path or an object")
        if "spin_chain" in doc:
            sc = doc["spin_chain"]
            n = int(sc.get("n", 4))
            if "h" in sc:
                grid = _axis(sc["h"], "h")
            elif "hx" in sc and "hz" in sc:
                gx, gz = _axis(sc["hx"], "hx"), _axis(sc["hz"], "hz")
                grid = PhysicalGrid((gx.axes[0], gz.axes[0]), ("hx", "hz"))
            else:
                raise ConfigError("spin_chain needs 'h' or both 'hx' and 'hz'")
            return build_spin_chain(n, grid)
        return hamiltonian_from_dict(doc)
    except HamiltonianFormatError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"hamiltonian: {exc}") from exc


# --- tables ------------------------------------------------------------------------


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def energy_rows(H: ParameterizedHamiltonian, result) -> tuple[list, list]:
    header = ["alpha", *H.grid.axis_names, "energy", "exact_energy", "error", "best_observed"]
    rows = []
    for a, x in enumerate(H.grid.points()):
        exact = result.exact_energies[a] if result.exact_energies is not None else float("nan")
        rows.append([a, *map(float, x), float(result.energies[a]), float(exact),
                     float(result.energies[a] - exact), float(result.best_observed[a])])
    return header, rows


def trace_rows(result) -> tuple[list, list]:
    header = ["alpha", "iteration", "best_so_far"]
    rows = [[a, t, float(v)] for a, tr in enumerate(result.traces) for t, v in enumerate(tr)]
    return header, rows


# --- commands --------------------------------------------------------------------------


def cmd_exact(cfg: ExperimentConfig, args) -> int:
    H = cfg.hamiltonian()
    if H.n > MAX_DENSE_QUBITS:
        raise ConfigError(f"exact diagonalization is limited to {MAX_DENSE_QUBITS} qubits, got {H.n}")
    energies = exact_energies(H)
    out = cfg.output_dir(args.out)
    rows = [[a, *map(float, x), float(e)] for a, (x, e) in enumerate(zip(H.grid.points(), energies))]
    write_csv(out / "exact.csv", ["alpha", *H.grid.axis_names, "exact_energy"], rows)
    print(f"wrote {len(rows)} exact energies to {out / 'exact.csv'}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    rc = cfg.run_config(args.seed)
    out = cfg.output_dir(args.out)
    t0 = time.perf_counter()
    result = run(rc, args.workers)
    log.info("run finished in %.1f s", time.perf_counter() - t0)
    write_json(out / "results.json", result.to_dict())
    write_csv(out / "energies.csv", *energy_rows(rc.hamiltonian, result))
    write_csv(out / "traces.csv", *trace_rows(result))
    print(f"total theta evaluations: {result.total_evaluations} (initial {result.initial_evaluations})")
    if result.errors is not None:
        print(f"mean error {fmt(float(np.mean(result.errors)))}, median {fmt(float(np.median(result.errors)))}")
    print(f"results in {out}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    if not cfg.exact:
        raise ConfigError("compare needs backend 'exact' (errors are measured against exact energies)")
    strategies = cfg.raw.get("strategies", list(STRATEGIES))
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies {bad}; choose from {list(STRATEGIES)}")
    repetitions = int(cfg.raw.get("repetitions", 20))
    if repetitions < 0:
        raise ConfigError("repetitions must be nonnegative")
    template = cfg.run_config(args.seed)
    if template.hamiltonian.n > MAX_DENSE_QUBITS:
        raise ConfigError("compare needs exact energies, which are limited to small systems")
    out = cfg.output_dir(args.out)

    def progress(strategy, r, res):
        log.info("%s repetition %d: mean error %.4g", strategy, r, float(np.mean(res.errors)))

    errors = compare_strategies(template, strategies, repetitions, args.workers, progress)
    H = template.hamiltonian
    doc = {"repetitions": repetitions, "seed": template.seed, "strategies": {}}
    raw_rows = []
    for s, errs in errors.items():
        label = f"{s}_{template.extra}" if s == INDEPENDENT_RANDOM else s
        summary = summarize_errors(errs)
        doc["strategies"][label] = {"summary": summary, "errors": errs.tolist()}
        names = ["mean", "median"] + [k for k in summary.get("aggregate", {}) if k.startswith("q")]
        rows = [[a, *map(float, x), *[float(summary["per_point"][a][k]) for k in names]]
                for a, x in enumerate(H.grid.points())] if summary["per_point"] else []
        if summary["aggregate"]:
            rows.append(["all", *[""] * H.grid.dims, *[float(summary["aggregate"][k]) for k in names]])
        write_csv(out / f"errors_{label}.csv", ["alpha", *H.grid.axis_names, *names], rows)
        for r in range(errs.shape[0]):
            for a in range(errs.shape[1]):
                raw_rows.append([label, r, a, float(errs[r, a])])
        if summary["aggregate"]:
            agg = summary["aggregate"]
            print(f"{label:>22}: mean {fmt(agg['mean'])}  median {fmt(agg['median'])}")
    write_json(out / "compare.json", doc)
    write_csv(out / "errors_raw.csv", ["strategy", "repetition", "alpha", "error"], raw_rows)
    print(f"results in {out}")
    return EXIT_OK


def cmd_build_ansatz(cfg: ExperimentConfig, args) -> int:
    b = cfg.raw.get("build")
    if not isinstance(b, dict):
        raise ConfigError("build-ansatz needs a 'build' object")
    if "target" not in b:
        raise ConfigError("build needs a 'target' Hamiltonian (a single grid point)")
    target_H = hamiltonian_spec(b["target"], cfg)
    alpha = int(b.get("target_alpha", 0))
    if not 0 <= alpha < target_H.grid.size:
        raise ConfigError(f"target_alpha {alpha} outside the target grid")
    if target_H.n > MAX_DENSE_QUBITS:
        raise ConfigError("target states need exact diagonalization; too many qubits")
    target_x = np.array(target_H.grid.point(alpha))
    grid_H = cfg.hamiltonian() if "hamiltonian" in cfg.raw else None
    if grid_H is not None:
        if grid_H.n != target_H.n:
            raise ConfigError("target and optimizer Hamiltonians act on different qubit counts")
        pts = np.array(grid_H.grid.points(), dtype=float)
        if pts.shape[1] == target_x.size and np.any(np.all(np.abs(pts - target_x) < 1e-12, axis=1)):
            raise ConfigError(f"target point {target_x.tolist()} coincides with an optimizer grid point")
    edges = b.get("connectivity", [[q, q + 1] for q in range(target_H.n - 1)])
    try:
        graph = ConnectivityGraph(target_H.n, tuple(tuple(e) for e in edges))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"connectivity: {exc}") from exc
    gate_set = b.get("gate_set", "ry")
    if gate_set not in ("ry", "zyz"):
        raise ConfigError("gate_set must be 'ry' or 'zyz'")
    threshold = float(b.get("threshold", 1e-7))
    if threshold <= 0:
        raise ConfigError("threshold must be positive")

    matrix = dense_matrix(target_H, alpha)
    if spectral_gap(matrix) < DEGENERATE_GAP:
        raise ConfigError("target ground state is degenerate; pick another target point")
    _, psi = ground_state(matrix)
    grid_targets, grid_points = None, None
    if grid_H is not None and b.get("fix_constants", True):
        grid_targets, grid_points = [], []
        for a in range(grid_H.grid.size):
            m = dense_matrix(grid_H, a)
            if spectral_gap(m) < DEGENERATE_GAP:
                log.info("skipping grid point %d: degenerate ground state", a)
                continue
            grid_targets.append(ground_state(m)[1])
            grid_points.append(grid_H.grid.point(a))
    seed = args.seed if args.seed is not None else int(cfg.raw.get("seed", 0))
    result = build_ansatz(
        psi,
        graph,
        threshold=threshold,
        max_blocks=int(b.get("max_blocks", 12)),
        gate_set=gate_set,
        restarts=int(b.get("restarts", RESTARTS)),
        seed=seed,
        grid_targets=grid_targets,
        grid_points=grid_points,
        target_point=target_x,
        const_tol=float(b.get("const_tol", CONST_TOL)),
    )
    for line in result.log:
        log.info(line)
    out = cfg.output_dir(args.out)
    path = out / b.get("file", "ansatz.json")
    extra = result.summary()
    extra["target"] = target_x.tolist()
    extra["threshold"] = threshold
    extra["angles_at_target"] = [float(v) for v in result.theta]
    save_ansatz_file(result.circuit, path, extra)
    print(f"1-F = {result.infidelity:.3e}, entangling blocks = {result.n_blocks}, parameters d = {result.circuit.d}")
    print(f"wrote {path}")
    if not result.converged:
        print("growth did not reach the threshold; the best circuit was written", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


COMMANDS = {"build-ansatz": cmd_build_ansatz, "run": cmd_run, "compare": cmd_compare, "exact": cmd_exact}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bois", description="Bayesian optimisation with information sharing for VQE families.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        s.add_argument("--out", default=None, help="output directory (overrides the config)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = ExperimentConfig.load(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
