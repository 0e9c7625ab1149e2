"""Acceptance criteria, each at its stated tolerance.

Every test records one pass/fail line, printed in the "acceptance criteria"
section at the end of the pytest run.  Criterion 1 runs the full desk-scale
strategy comparison and takes most of an hour on one core.
"""

import json
import math
from importlib import resources

import numpy as np
import pytest

from bois import gp
from bois.ansatz import ConnectivityGraph, Layout, grow, shrink
from bois.bo import BayesOptimizer, BoundsBox, acquisition_lcb, kappa
from bois.circuit import (
    EnergyCost,
    expval_sampled,
    finite_difference_gradient,
    infidelity_and_gradient,
    load_ansatz_file,
    measure,
    parameter_shift_gradient,
    simulate,
)
from bois.cli import main
from bois.exact import dense_matrix, ground_state
from bois.orchestrator import (
    ALL_TO_ALL,
    INDEPENDENT,
    INDEPENDENT_RANDOM,
    NEAREST_NEIGHBOUR,
    RunConfig,
    compare_strategies,
    run,
)
from bois.pauli import PhysicalGrid, build_spin_chain, energy_from_expectations

from conftest import random_circuit, report_criterion


@pytest.fixture(scope="module")
def spin_ansatz():
    with resources.as_file(resources.files("bois") / "data" / "spin_chain_4q_ansatz.json") as p:
        return load_ansatz_file(p)


def check(number, title, ok, detail=""):
    report_criterion(number, title, bool(ok), detail)
    assert ok, detail


@pytest.mark.slow
def test_criterion_1_strategy_ordering(spin_ansatz):
    H = build_spin_chain(4, PhysicalGrid.linspace(0.0, 0.9, 15))
    cfg = RunConfig(H, spin_ansatz, M=10, N=30, exact=True, extra=2, seed=2024)
    errors = compare_strategies(cfg, [ALL_TO_ALL, NEAREST_NEIGHBOUR, INDEPENDENT_RANDOM, INDEPENDENT], 20)
    mean = {s: float(e.mean()) for s, e in errors.items()}
    nn_median = float(np.median(errors[NEAREST_NEIGHBOUR]))
    ordered = mean[ALL_TO_ALL] <= mean[NEAREST_NEIGHBOUR] < mean[INDEPENDENT_RANDOM] < mean[INDEPENDENT]
    detail = ", ".join(f"{s} mean {v:.4f}" for s, v in mean.items()) + f", nearest_neighbour median {nn_median:.4f}"
    check(1, "strategy ordering and nearest-neighbour median < 0.1", ordered and nn_median < 0.1, detail)


def test_criterion_2_evaluation_accounting(spin_ansatz):
    axis = np.linspace(0.0, 0.9, 8)
    H = build_spin_chain(4, PhysicalGrid((tuple(axis), tuple(axis)), ("hx", "hz")))
    res = run(RunConfig(H, spin_ansatz, NEAREST_NEIGHBOUR, M=10, N=10, exact=True, seed=1))
    check(2, "8x8 grid, M=10, N=10, nearest neighbour: 650 evaluations",
          res.total_evaluations == 650, f"{res.total_evaluations} evaluations")


def test_criterion_3_cross_evaluation(spin_ansatz):
    H = build_spin_chain(4, PhysicalGrid.linspace(0.0, 0.9, 15))
    mats = [dense_matrix(H, b) for b in range(H.grid.size)]
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        theta = rng.uniform(0, 2 * math.pi, spin_ansatz.d)
        alpha, beta = rng.integers(H.grid.size, size=2)
        psi = simulate(spin_ansatz, theta)
        # expectations measured for optimizer alpha, reused for beta
        e = measure(psi, H.paulis).values
        shared = energy_from_expectations(H, int(beta), e)
        direct = float(np.vdot(psi, mats[beta] @ psi).real)
        worst = max(worst, abs(shared - direct))
    check(3, "cross-evaluation equals dense energy within 1e-10", worst <= 1e-10, f"max deviation {worst:.2e}")


def test_criterion_4_gp_suite():
    rng = np.random.default_rng(4)
    results = {}

    X = rng.uniform(0, 2 * math.pi, (12, 3))
    y = np.sin(X).sum(1)
    model = gp.build_model(X, y, gp.KernelParams(1.0, 1.2, 0.0))
    results["interpolation"] = float(np.abs(model.predict_many(X)[0] - y).max())

    X5, y5 = rng.uniform(0, 3, (5, 2)), rng.normal(size=5)
    sf2, ell, sn2 = 1.3, 0.9, 1e-3
    model = gp.build_model(X5, y5, gp.KernelParams(sf2, ell, sn2))
    Q = rng.uniform(0, 3, (50, 2))

    def k(A, B):
        s = math.sqrt(5) * np.linalg.norm(A[:, None] - B[None], axis=-1) / ell
        return sf2 * (1 + s + s * s / 3) * np.exp(-s)

    m, sc = y5.mean(), y5.std()
    Kinv = np.linalg.inv(k(X5, X5) + sn2 * np.eye(5))
    Ks = k(Q, X5)
    mu_o = m + sc * Ks @ Kinv @ ((y5 - m) / sc)
    var_o = sc**2 * (sf2 - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks))
    mu, var = model.predict_many(Q)
    results["dense inverse"] = float(max(np.abs(mu - mu_o).max(), np.abs(var - var_o).max()))

    Xf = rng.uniform(0, 2 * math.pi, (30, 4))
    fitted = gp.fit(Xf, np.cos(Xf).sum(1), rng=rng)
    _, v = fitted.predict_many(rng.uniform(0, 2 * math.pi, (1000, 4)))
    results["variance excess"] = float(max(0.0, (v - fitted.prior_variance).max()))

    at_zero = gp.matern52(0.0, gp.KernelParams(2.7, 0.4, 0.0))
    ok = (
        results["interpolation"] <= 1e-8
        and results["dense inverse"] <= 1e-8
        and results["variance excess"] <= 1e-8
        and at_zero == 2.7
    )
    detail = ", ".join(f"{k} {v:.1e}" for k, v in results.items()) + f", k(0) = {at_zero}"
    check(4, "GP interpolation, dense-inverse match, variance bound, k(0) = sf2", ok, detail)


def test_criterion_5_kappa_and_acquisition():
    X = np.linspace(0.2, 2 * math.pi - 0.2, 9)[:, None]
    y = (X[:, 0] - 2.0) ** 2
    opt = BayesOptimizer(BoundsBox.angles(1), n_iter=10, rng=np.random.default_rng(5), fixed_noise=1e-8)
    opt.ingest(zip(X, y))
    opt.t = 9  # last iteration: kappa = 0
    model = opt.refresh()
    grid = np.linspace(0, 2 * math.pi, 20001)[:, None]
    mu = model.predict_many(grid)[0]
    scan = float(grid[np.argmin(mu), 0])
    theta = float(opt.propose()[0])
    lcb_is_mean = bool(np.array_equal(acquisition_lcb(model, grid[::100], 0.0), mu[::100]))
    k_end = kappa(10, 10, 2.0)
    ok = k_end == 0.0 and lcb_is_mean and abs(theta - scan) < 0.1
    check(5, "kappa(N) = 0, LCB at kappa 0 is the mean, proposal within 0.1 of the minimizer", ok,
          f"kappa(N) = {k_end}, proposal {theta:.4f} vs scan {scan:.4f}")


def test_criterion_6_shot_noise():
    rng = np.random.default_rng(6)
    psi = np.array([1, 0], complex)  # <X> = 0
    draws = np.array([expval_sampled(psi, "X", 1024, rng) for _ in range(1000)])
    sd, target = float(draws.std(ddof=1)), 1 / 32
    sd_ok = abs(sd - target) <= 3 * target / math.sqrt(2 * (len(draws) - 1))
    many = np.array([expval_sampled(psi, "X", 1024, rng) for _ in range(10_000)])
    bias = float(many.mean())
    bias_ok = abs(bias) <= 4 * target / math.sqrt(len(many))
    check(6, "shot-noise spread and bias at 1024 shots", sd_ok and bias_ok, f"sd {sd:.5f} vs {target:.5f}, bias {bias:.2e}")


def test_criterion_7_gradients():
    rng = np.random.default_rng(7)
    H = build_spin_chain(4, PhysicalGrid.linspace(0.0, 0.9, 15))
    worst = 0.0
    for _ in range(20):
        c = random_circuit(rng, 4, 16, kinds=("RX", "RY", "RZ", "U3", "CNOT"))
        theta = rng.uniform(0, 2 * math.pi, c.d)
        cost = EnergyCost(H, int(rng.integers(H.grid.size)))
        diff = parameter_shift_gradient(c, theta, cost) - finite_difference_gradient(c, theta, cost, 1e-5)
        worst = max(worst, float(np.abs(diff).max()))
    check(7, "parameter shift matches central differences within 1e-6", worst <= 1e-6, f"max deviation {worst:.2e}")


def test_criterion_8_ansatz_builder():
    H = build_spin_chain(4, PhysicalGrid(((0.5,),)))
    _, target = ground_state(dense_matrix(H, 0))
    threshold = 1e-7
    line = ConnectivityGraph.line(4)
    state = grow(target, line, threshold, rng=np.random.default_rng(0))
    layout, theta, infid = shrink(state.layout, state.theta, target, threshold, rng=np.random.default_rng(0))
    grown_ok = infid < 1e-6 and layout.n_blocks <= 12

    # a layer of RZ gates acting on |0000> only adds a phase, so it is redundant
    padded = Layout(4, [("RZ", (q,)) for q in range(4)] + layout.gates)
    padded_theta = np.concatenate([[0.3, 1.0, 2.0, 4.0], theta])
    small, _, infid_small = shrink(padded, padded_theta, target, threshold, rng=np.random.default_rng(1))
    shrink_ok = small.d < padded.d and infid_small <= 10 * threshold
    ok = grown_ok and shrink_ok and state.converged
    detail = (
        f"grown: {state.layout.n_blocks} blocks, d {state.layout.d} -> {layout.d}, 1-F {infid:.2e}; "
        f"padded d {padded.d} -> {small.d}, 1-F {infid_small:.2e}"
    )
    check(8, "grow+shrink reaches 1-F < 1e-6 within 12 blocks; shrink prunes padding", ok, detail)


def test_criterion_9_determinism(tmp_path):
    doc = {
        "hamiltonian": {"spin_chain": {"n": 4, "h": {"start": 0.0, "stop": 0.9, "num": 15}}},
        "ansatz": {"builtin": "spin_chain_4q"},
        "backend": "shots",
        "M": 5,
        "N": 3,
        "seed": 9,
    }
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(doc))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "w1"), "--workers", "1"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "w8"), "--workers", "8"]) == 0
    names = ("results.json", "energies.csv", "traces.csv")
    same = all((tmp_path / "w1" / n).read_bytes() == (tmp_path / "w8" / n).read_bytes() for n in names)
    check(9, "run outputs byte-identical at 1 and 8 workers", same)
