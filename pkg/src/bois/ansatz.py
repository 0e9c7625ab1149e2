"""Target-state ansatz construction: greedy entangler growth, then periodic-L1 shrinkage.

Circuits are grown on *virtual* qubits (the Hamiltonian's qubit labels).  An
entangler on a virtual pair is legal when the set of all entangled pairs can
still be embedded in the hardware connectivity graph; the embedding found at
the end is reported as the virtual-to-physical mapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from networkx.algorithms.isomorphism import GraphMatcher
from scipy.optimize import minimize

from .circuit import AnsatzCircuit, Fixed, Free, Gate, infidelity_and_gradient

TWO_PI = 2 * math.pi
GATE_SETS = {"ry": ("RY",), "zyz": ("RZ", "RY", "RZ")}
ETA_SCHEDULE = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
REMOVAL_TOL = 0.05
CONST_TOL = 0.02
RESTARTS = 3
MAX_STEPS = 500
DEGRADE_FACTOR = 10.0  # shrinkage may raise 1-F up to this multiple of the growth threshold
START, END = 0, 1


@dataclass(frozen=True)
class ConnectivityGraph:
    n: int
    edges: tuple

    def __post_init__(self):
        edges = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                raise ValueError(f"bad edge ({a}, {b}) for {self.n} qubits")
            edges.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        if self.n > 1 and not nx.is_connected(self.graph()):
            raise ValueError("connectivity graph must be connected")

    @classmethod
    def line(cls, n: int) -> "ConnectivityGraph":
        return cls(n, tuple((q, q + 1) for q in range(n - 1)))

    @classmethod
    def complete(cls, n: int) -> "ConnectivityGraph":
        return cls(n, tuple((a, b) for a in range(n) for b in range(a + 1, n)))

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g


def embedding(pairs, graph: ConnectivityGraph) -> dict | None:
    """A virtual-to-physical map placing every entangled pair on an edge, or None."""
    virt = nx.Graph()
    virt.add_nodes_from(range(graph.n))
    virt.add_edges_from((min(a, b), max(a, b)) for a, b in pairs)
    matcher = GraphMatcher(graph.graph(), virt)
    for phys_to_virt in matcher.subgraph_monomorphisms_iter():
        return {v: p for p, v in sorted(phys_to_virt.items())}
    return None


# --- circuit layouts -----------------------------------------------------------
#
# During construction a circuit is a list of (kind, qubits) plus one angle per
# rotation; every angle is free.  ``Layout.circuit()`` assigns parameter indices
# in gate order.


@dataclass
class Layout:
    n: int
    gates: list = field(default_factory=list)  # (kind, qubits)

    def copy(self) -> "Layout":
        return Layout(self.n, list(self.gates))

    @property
    def d(self) -> int:
        return sum(kind != "CNOT" for kind, _ in self.gates)

    def circuit(self) -> AnsatzCircuit:
        out, k = [], 0
        for kind, qubits in self.gates:
            if kind == "CNOT":
                out.append(Gate("CNOT", qubits))
            else:
                out.append(Gate(kind, qubits, (Free(k),)))
                k += 1
        return AnsatzCircuit(self.n, out, k)

    def entangled_pairs(self) -> list:
        return [qubits for kind, qubits in self.gates if kind == "CNOT"]

    @property
    def n_blocks(self) -> int:
        return len(self.entangled_pairs())

    def param_slots(self) -> list[int]:
        """Gate position of each parameter."""
        return [i for i, (kind, _) in enumerate(self.gates) if kind != "CNOT"]


def rotation(q: int, gate_set: str) -> list:
    return [(kind, (q,)) for kind in GATE_SETS[gate_set]]


def separable_layout(n: int, gate_set: str = "ry") -> Layout:
    return Layout(n, [g for q in range(n) for g in rotation(q, gate_set)])


def entangling_block(control: int, target: int, gate_set: str) -> list:
    pad = rotation(control, gate_set) + rotation(target, gate_set)
    return pad + [("CNOT", (control, target))] + pad


def with_block(layout: Layout, theta, pair, position: int, gate_set: str):
    """Insert a block at the circuit start or end; new angles are zero.

    Returns the new layout, the warm-start angles and a mask of the new parameters.
    """
    block = entangling_block(*pair, gate_set)
    n_new = sum(kind != "CNOT" for kind, _ in block)
    theta = np.asarray(theta, dtype=float)
    new = layout.copy()
    if position == START:
        new.gates = block + new.gates
        theta = np.concatenate([np.zeros(n_new), theta])
        mask = np.arange(len(theta)) < n_new
    else:
        new.gates = new.gates + block
        theta = np.concatenate([theta, np.zeros(n_new)])
        mask = np.arange(len(theta)) >= len(theta) - n_new
    return new, theta, mask


def without_gate(layout: Layout, theta, gate_pos: int):
    new = layout.copy()
    slots = layout.param_slots()
    del new.gates[gate_pos]
    keep = [j for j, pos in enumerate(slots) if pos != gate_pos]
    return new, np.asarray(theta, dtype=float)[keep]


# --- angle optimization ----------------------------------------------------------


def periodic_distance(phi):
    """Distance from ``phi`` to the nearest multiple of 2 pi; lies in [0, pi]."""
    phi = np.asarray(phi, dtype=float)
    return np.abs(phi - TWO_PI * np.round(phi / TWO_PI))


def regularized_cost(circuit: AnsatzCircuit, theta, target, eta: float = 0.0):
    """1 - F + eta * sum D(phi_i), with a subgradient for the penalty."""
    c, g = infidelity_and_gradient(circuit, theta, target)
    if eta > 0:
        theta = np.asarray(theta, dtype=float)
        off = theta - TWO_PI * np.round(theta / TWO_PI)
        c += eta * float(np.abs(off).sum())
        g = g + eta * np.sign(off)
    return c, g


def _local_fit(circuit, theta0, target, eta, max_steps):
    res = minimize(
        lambda th: regularized_cost(circuit, th, target, eta),
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_steps, "ftol": 1e-16, "gtol": 1e-12},
    )
    return res.x, float(res.fun)


def optimize_angles(
    circuit: AnsatzCircuit,
    target,
    theta0=None,
    *,
    restarts: int = RESTARTS,
    rng: np.random.Generator | None = None,
    randomize=None,
    eta: float = 0.0,
    max_steps: int = MAX_STEPS,
) -> tuple[np.ndarray, float]:
    """Minimize 1 - F (plus the periodic penalty when ``eta > 0``) from several starts.

    The first start is ``theta0`` (zeros if omitted); later starts redraw the
    entries selected by ``randomize`` (all entries by default) uniformly in
    [0, 2 pi).  Returns the best angles and their fidelity.
    """
    target = np.asarray(target, dtype=complex)
    rng = np.random.default_rng(0) if rng is None else rng
    theta0 = np.zeros(circuit.d) if theta0 is None else np.asarray(theta0, dtype=float)
    mask = np.ones(circuit.d, bool) if randomize is None else np.asarray(randomize, bool)
    if circuit.d == 0:
        c, _ = infidelity_and_gradient(circuit, theta0, target)
        return theta0, 1.0 - c
    best_x, best_c = None, np.inf
    for r in range(max(1, restarts)):
        start = theta0.copy()
        if r > 0:
            start[mask] = rng.uniform(0, TWO_PI, int(mask.sum()))
        x, c = _local_fit(circuit, start, target, eta, max_steps)
        if c < best_c:
            best_x, best_c = x, c
    infid, _ = infidelity_and_gradient(circuit, best_x, target)
    return best_x, 1.0 - infid


# --- growth -------------------------------------------------------------------------


@dataclass
class GrowthState:
    layout: Layout
    theta: np.ndarray
    infidelity: float
    mapping: dict
    converged: bool = False
    history: list = field(default_factory=list)  # accepted (position, pair, infidelity)

    @property
    def circuit(self) -> AnsatzCircuit:
        return self.layout.circuit()

    @property
    def fidelity(self) -> float:
        return 1.0 - self.infidelity


def candidate_placements(layout: Layout, graph: ConnectivityGraph) -> list:
    """Legal (position, (control, target)) placements in tie-break order."""
    used = layout.entangled_pairs()
    pairs = [(a, b) for a in range(layout.n) for b in range(layout.n) if a != b]
    legal = [p for p in pairs if embedding(used + [p], graph) is not None]
    return [(pos, p) for pos in (START, END) for p in legal]


def grow(
    target,
    graph: ConnectivityGraph,
    threshold: float = 1e-7,
    max_blocks: int = 12,
    *,
    gate_set: str = "ry",
    restarts: int = RESTARTS,
    rng: np.random.Generator | None = None,
    log=None,
) -> GrowthState:
    """Add the best entangling block one at a time until 1 - F < threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    target = np.asarray(target, dtype=complex)
    if target.shape != (2**graph.n,):
        raise ValueError(f"target has {target.size} amplitudes, expected {2**graph.n}")
    if abs(np.linalg.norm(target) - 1.0) > 1e-8:
        raise ValueError("target state is not normalized")
    rng = np.random.default_rng(0) if rng is None else rng
    layout = separable_layout(graph.n, gate_set)
    theta, fid = optimize_angles(layout.circuit(), target, restarts=restarts, rng=rng)
    state = GrowthState(layout, theta, 1.0 - fid, {})
    while state.infidelity >= threshold and state.layout.n_blocks < max_blocks:
        best = None
        for pos, pair in candidate_placements(state.layout, graph):
            cand, theta0, mask = with_block(state.layout, state.theta, pair, pos, gate_set)
            theta_c, fid_c = optimize_angles(cand.circuit(), target, theta0, restarts=restarts, rng=rng, randomize=mask)
            # strict improvement keeps the earliest placement on ties
            if best is None or 1.0 - fid_c < best[0]:
                best = (1.0 - fid_c, pos, pair, cand, theta_c)
        if best is None or best[0] >= state.infidelity:
            break  # no legal placement improves the fidelity
        infid, pos, pair, cand, theta_c = best
        state = GrowthState(cand, theta_c, infid, {}, history=state.history + [(pos, pair, infid)])
        if log:
            log(f"block {cand.n_blocks}: {'start' if pos == START else 'end'} {pair} 1-F={infid:.3e}")
    state.converged = state.infidelity < threshold
    state.mapping = embedding(state.layout.entangled_pairs(), graph) or {}
    return state


# --- shrinkage ------------------------------------------------------------------------


def shrink(
    layout: Layout,
    theta,
    target,
    threshold: float,
    *,
    eta_schedule=ETA_SCHEDULE,
    removal_tol: float = REMOVAL_TOL,
    restarts: int = 1,
    rng: np.random.Generator | None = None,
    log=None,
) -> tuple[Layout, np.ndarray, float]:
    """Remove single-qubit gates whose angles regularize to multiples of 2 pi.

    For each weight in ``eta_schedule`` the angles are re-optimized with the
    periodic L1 penalty; gates within ``removal_tol`` of a multiple of 2 pi
    are then tried for removal one at a time (closest first) and kept out
    only if the re-optimized 1 - F stays within DEGRADE_FACTOR * threshold.
    Returns the layout, its angles and the final infidelity.
    """
    target = np.asarray(target, dtype=complex)
    rng = np.random.default_rng(0) if rng is None else rng
    limit = DEGRADE_FACTOR * threshold
    theta = np.asarray(theta, dtype=float)
    infid, _ = infidelity_and_gradient(layout.circuit(), theta, target)
    for eta in eta_schedule:
        theta_reg, _ = optimize_angles(layout.circuit(), target, theta, restarts=1, rng=rng, eta=eta)
        dist = periodic_distance(theta_reg)
        slots = layout.param_slots()
        order = [j for j in np.argsort(dist, kind="stable") if dist[j] <= removal_tol]
        # slots are renumbered after each removal; removed gates map to None
        removed = 0
        base_theta = theta_reg
        for j in order:
            gate_pos = slots[j]
            if gate_pos is None:
                continue
            cand, theta_c = without_gate(layout, base_theta, gate_pos)
            theta_c, fid = optimize_angles(cand.circuit(), target, theta_c, restarts=restarts, rng=rng)
            if 1.0 - fid <= limit:
                layout, base_theta, infid = cand, theta_c, 1.0 - fid
                removed += 1
                slots = [None if s is None or s == gate_pos else (s - 1 if s > gate_pos else s) for s in slots]
        theta, fid = optimize_angles(layout.circuit(), target, base_theta, restarts=1, rng=rng)
        infid = 1.0 - fid
        if log:
            log(f"eta={eta:g}: removed {removed} gates, d={layout.d}, 1-F={infid:.3e}")
    return layout, theta, infid


# --- constant angles ----------------------------------------------------------------


def fix_constant_angles(circuit: AnsatzCircuit, optima, const_tol: float = CONST_TOL) -> tuple[AnsatzCircuit, np.ndarray]:
    """Fix every free angle whose spread over the optima table is below ``const_tol``.

    ``optima`` has one row of angles per grid point.  Each column is unwrapped
    by multiples of 2 pi towards the first row before its spread is measured;
    a fixed angle takes the column mean.  Returns the new circuit and the
    mapping of old to new parameter columns (-1 for fixed ones).
    """
    optima = np.atleast_2d(np.asarray(optima, dtype=float))
    if optima.shape[1] != circuit.d:
        raise ValueError(f"optima have {optima.shape[1]} columns, circuit has {circuit.d} parameters")
    ref = optima[0]
    unwrapped = ref + (optima - ref) - TWO_PI * np.round((optima - ref) / TWO_PI)
    spread = unwrapped.max(axis=0) - unwrapped.min(axis=0)
    constant = spread < const_tol
    means = unwrapped.mean(axis=0)
    new_index = -np.ones(circuit.d, dtype=int)
    new_index[~constant] = np.arange(int((~constant).sum()))
    gates = []
    for g in circuit.gates:
        angles = []
        for a in g.angles:
            if isinstance(a, Free):
                angles.append(Fixed(float(means[a.index])) if constant[a.index] else Free(int(new_index[a.index])))
            else:
                angles.append(a)
        gates.append(Gate(g.kind, g.qubits, tuple(angles)))
    return AnsatzCircuit(circuit.n, gates, int((~constant).sum())), new_index


def continuation_optima(
    circuit: AnsatzCircuit, targets, points, start_point, theta_start, *, rng=None
) -> np.ndarray:
    """Optimal angles at every target, warm-started from the nearest solved point.

    Points are visited in order of distance from ``start_point`` (where the
    angles ``theta_start`` are already optimal), so the solution is carried
    continuously across the grid instead of jumping between equivalent optima.
    """
    points = np.asarray(points, dtype=float).reshape(len(targets), -1)
    start_point = np.asarray(start_point, dtype=float).reshape(-1)
    order = np.argsort(np.linalg.norm(points - start_point, axis=1), kind="stable")
    solved_pts = [start_point]
    solved_theta = [np.asarray(theta_start, dtype=float)]
    out = np.empty((len(targets), circuit.d))
    for i in order:
        nearest = int(np.argmin(np.linalg.norm(np.array(solved_pts) - points[i], axis=1)))
        theta, _ = optimize_angles(circuit, targets[i], solved_theta[nearest], restarts=1, rng=rng)
        out[i] = theta
        solved_pts.append(points[i])
        solved_theta.append(theta)
    return out


@dataclass
class BuildResult:
    circuit: AnsatzCircuit
    theta: np.ndarray
    infidelity: float
    converged: bool
    n_blocks: int
    mapping: dict
    grown_d: int
    shrunk_d: int
    log: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "infidelity": self.infidelity,
            "converged": self.converged,
            "entangling_blocks": self.n_blocks,
            "parameters": self.circuit.d,
            "parameters_after_growth": self.grown_d,
            "parameters_after_shrinkage": self.shrunk_d,
            "qubit_mapping": {str(k): int(v) for k, v in sorted(self.mapping.items())},
        }


def build_ansatz(
    target,
    graph: ConnectivityGraph,
    *,
    threshold: float = 1e-7,
    max_blocks: int = 12,
    gate_set: str = "ry",
    restarts: int = RESTARTS,
    seed: int = 0,
    grid_targets=None,
    grid_points=None,
    target_point=None,
    const_tol: float = CONST_TOL,
) -> BuildResult:
    """Grow, shrink and (given grid targets) fix angles that barely vary across the grid.

    Grid points whose ground state is degenerate should be left out of
    ``grid_targets``: their target state is arbitrary within the ground space.
    """
    rng = np.random.default_rng(seed)
    messages: list[str] = []
    state = grow(target, graph, threshold, max_blocks, gate_set=gate_set, restarts=restarts, rng=rng, log=messages.append)
    layout, theta, infid = state.layout, state.theta, state.infidelity
    grown_d = layout.d
    if state.converged:
        layout, theta, infid = shrink(layout, theta, target, threshold, rng=rng, log=messages.append)
    shrunk_d = layout.d
    circuit = layout.circuit()
    if grid_targets is not None and len(grid_targets) and state.converged:
        optima = continuation_optima(circuit, grid_targets, grid_points, target_point, theta, rng=rng)
        fixed, new_index = fix_constant_angles(circuit, np.vstack([theta, optima]), const_tol)
        theta = theta[new_index >= 0]
        infid, _ = infidelity_and_gradient(fixed, theta, target)
        messages.append(f"fixed {circuit.d - fixed.d} constant angles, d={fixed.d}, 1-F={infid:.3e}")
        circuit = fixed
    return BuildResult(
        circuit=circuit,
        theta=theta,
        infidelity=float(infid),
        converged=bool(state.converged and infid <= DEGRADE_FACTOR * threshold),
        n_blocks=layout.n_blocks,
        mapping=state.mapping,
        grown_d=grown_d,
        shrunk_d=shrunk_d,
        log=messages,
    )
