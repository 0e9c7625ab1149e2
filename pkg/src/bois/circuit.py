"""Dense statevector simulation of parameterized ansatz circuits.

Amplitude index ``b`` encodes the computational basis state with qubit ``k`` in
bit ``k`` (qubit 0 is least significant).  Rotations follow
R_P(phi) = exp(-i phi P / 2); U3 is the usual Bloch rotation
[[cos t/2, -e^{il} sin t/2], [e^{ip} sin t/2, e^{i(p+l)} cos t/2]].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from .pauli import ParameterizedHamiltonian, PauliString

MAX_QUBITS = 14

GATE_ANGLES = {"RX": 1, "RY": 1, "RZ": 1, "U3": 3, "X": 0, "CNOT": 0}
GATE_QUBITS = {"RX": 1, "RY": 1, "RZ": 1, "U3": 1, "X": 1, "CNOT": 2}


class Free(NamedTuple):
    index: int


class Fixed(NamedTuple):
    value: float


Angle = Union[Free, Fixed]


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angles: tuple[Angle, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_ANGLES:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "angles", tuple(self.angles))
        if len(self.qubits) != GATE_QUBITS[self.kind]:
            raise ValueError(f"{self.kind} acts on {GATE_QUBITS[self.kind]} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit in {self.kind}{self.qubits}")
        if len(self.angles) != GATE_ANGLES[self.kind]:
            raise ValueError(f"{self.kind} takes {GATE_ANGLES[self.kind]} angle(s), got {len(self.angles)}")
        for a in self.angles:
            if not isinstance(a, (Free, Fixed)):
                raise TypeError(f"angle slots must be Free or Fixed, got {a!r}")

    @property
    def free_indices(self) -> list[int]:
        return [a.index for a in self.angles if isinstance(a, Free)]


@dataclass(frozen=True)
class AnsatzCircuit:
    """Ordered gate list acting on |0...0>, with ``d`` free parameters."""

    n: int
    gates: tuple[Gate, ...]
    d: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if not 1 <= self.n <= MAX_QUBITS:
            raise ValueError(f"qubit count must be in [1, {MAX_QUBITS}], got {self.n}")
        used = set()
        for g in self.gates:
            if any(not 0 <= q < self.n for q in g.qubits):
                raise ValueError(f"gate {g.kind}{g.qubits} outside {self.n} qubits")
            used.update(g.free_indices)
        if used != set(range(self.d)):
            raise ValueError(f"free parameter indices {sorted(used)} do not cover range({self.d})")

    @property
    def n_entanglers(self) -> int:
        return sum(g.kind == "CNOT" for g in self.gates)

    def angle_values(self, theta) -> list[tuple[float, ...]]:
        return [tuple(theta[a.index] if isinstance(a, Free) else a.value for a in g.angles) for g in self.gates]


class ExpectationSet(NamedTuple):
    """Pauli expectations aligned with a Hamiltonian's term list.

    ``shots`` is ``None`` for exact values.
    """

    values: np.ndarray
    shots: int | None = None


# --- gate matrices -----------------------------------------------------------

_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _rx(a):
    c, s = math.cos(a / 2), math.sin(a / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ry(a):
    c, s = math.cos(a / 2), math.sin(a / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(a):
    return np.array([[np.exp(-0.5j * a), 0], [0, np.exp(0.5j * a)]])


def _u3(t, p, l):
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array(
        [[c, -np.exp(1j * l) * s], [np.exp(1j * p) * s, np.exp(1j * (p + l)) * c]]
    )


_ROTATIONS = {"RX": _rx, "RY": _ry, "RZ": _rz}


def gate_matrix(kind: str, angles: Sequence[float] = ()) -> np.ndarray:
    if kind in _ROTATIONS:
        return _ROTATIONS[kind](angles[0])
    if kind == "U3":
        return _u3(*angles)
    if kind == "X":
        return _X
    raise ValueError(f"no single-qubit matrix for {kind}")


def apply_1q(psi: np.ndarray, U: np.ndarray, q: int) -> np.ndarray:
    # (high bits, qubit q, low bits)
    psi3 = psi.reshape(-1, 2, 1 << q)
    return np.einsum("ij,ajb->aib", U, psi3).reshape(-1)


@lru_cache(maxsize=None)
def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    b = np.arange(1 << n)
    return np.where((b >> control) & 1, b ^ (1 << target), b)


def apply_cnot(psi: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    return psi[_cnot_perm(n, control, target)]


def zero_state(n: int) -> np.ndarray:
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    return psi


def _check_theta(circuit: AnsatzCircuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != (circuit.d,):
        raise ValueError(f"expected {circuit.d} parameters, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    return theta


def simulate(circuit: AnsatzCircuit, theta) -> np.ndarray:
    """Statevector U(theta)|0...0>."""
    theta = _check_theta(circuit, theta)
    psi = zero_state(circuit.n)
    for g, angles in zip(circuit.gates, circuit.angle_values(theta)):
        if g.kind == "CNOT":
            psi = apply_cnot(psi, g.qubits[0], g.qubits[1], circuit.n)
        else:
            psi = apply_1q(psi, gate_matrix(g.kind, angles), g.qubits[0])
    return psi


# --- measurement -------------------------------------------------------------

@lru_cache(maxsize=4096)
def _pauli_action(ops: str) -> tuple[np.ndarray, np.ndarray]:
    """Index map and phases with P|b> = phase[b] |flip[b]>."""
    p = PauliString(ops)
    x_mask, z_mask, n_y = p.masks()
    b = np.arange(1 << p.n)
    parity = np.zeros_like(b)
    zb = b & z_mask
    while np.any(zb):
        parity ^= zb & 1
        zb >>= 1
    phase = (1j ** n_y) * (1 - 2 * parity)
    return b ^ x_mask, phase


def expval_exact(state: np.ndarray, pauli: PauliString | str) -> float:
    """<psi|P|psi> for a normalized statevector."""
    if not isinstance(pauli, PauliString):
        pauli = PauliString.parse(pauli)
    if state.shape != (1 << pauli.n,):
        raise ValueError(f"state of length {state.shape[0]} does not match {pauli.n} qubits")
    if pauli.is_identity:
        return 1.0
    flip, phase = _pauli_action(pauli.ops)
    val = np.vdot(state[flip], phase * state)
    return float(np.clip(val.real, -1.0, 1.0))


def expval_sampled(state: np.ndarray, pauli: PauliString | str, shots: int, rng: np.random.Generator) -> float:
    """Finite-shot estimate of <P>: 2k/shots - 1 with k ~ Binomial(shots, (1+<P>)/2)."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    exact = expval_exact(state, pauli)
    if isinstance(pauli, str):
        pauli = PauliString.parse(pauli)
    if pauli.is_identity:
        return 1.0
    p = min(max((1.0 + exact) / 2.0, 0.0), 1.0)
    k = rng.binomial(shots, p)
    return 2.0 * k / shots - 1.0


def measure(
    state: np.ndarray,
    paulis: Sequence[PauliString],
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> ExpectationSet:
    """Expectations of every Pauli term, exact (``shots=None``) or sampled per term."""
    if shots is None:
        vals = np.array([expval_exact(state, p) for p in paulis])
        return ExpectationSet(vals, None)
    if rng is None:
        raise ValueError("sampled measurement needs a random generator")
    vals = np.array([expval_sampled(state, p, shots, rng) for p in paulis])
    return ExpectationSet(vals, int(shots))


def fidelity(state: np.ndarray, target: np.ndarray) -> float:
    """Amplitude overlap |<psi|psi_t>| (not squared)."""
    if state.shape != target.shape:
        raise ValueError("state and target sizes differ")
    return float(min(abs(np.vdot(state, target)), 1.0))


# --- costs and gradients -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnergyCost:
    hamiltonian: ParameterizedHamiltonian
    alpha: int

    def __call__(self, state: np.ndarray) -> float:
        e = measure(state, self.hamiltonian.paulis).values
        return self.hamiltonian.energy(self.alpha, e)


@dataclass(frozen=True, eq=False)
class InfidelityCost:
    target: np.ndarray

    def __call__(self, state: np.ndarray) -> float:
        return 1.0 - fidelity(state, self.target)


def _elementary_ops(circuit: AnsatzCircuit):
    """Flatten into single-angle rotations; U3 -> RZ(l), RY(t), RZ(p) (equal up to phase).

    Yields (kind, qubits, angle) with angle either Free or Fixed.
    """
    ops = []
    for g in circuit.gates:
        if g.kind == "U3":
            t, p, l = g.angles
            q = g.qubits
            ops += [("RZ", q, l), ("RY", q, t), ("RZ", q, p)]
        else:
            ops.append((g.kind, g.qubits, g.angles[0] if g.angles else None))
    return ops


def _run_ops(n, ops, values):
    psi = zero_state(n)
    for (kind, qubits, _), a in zip(ops, values):
        if kind == "CNOT":
            psi = apply_cnot(psi, qubits[0], qubits[1], n)
        else:
            psi = apply_1q(psi, gate_matrix(kind, (a,)), qubits[0])
    return psi


def _slot_values(ops, theta):
    return [
        None if a is None else (theta[a.index] if isinstance(a, Free) else a.value)
        for _, _, a in ops
    ]


def parameter_shift_gradient(circuit: AnsatzCircuit, theta, cost: EnergyCost) -> np.ndarray:
    """Exact energy gradient via +-pi/2 shifts of every single-angle slot."""
    theta = _check_theta(circuit, theta)
    ops = _elementary_ops(circuit)
    base = _slot_values(ops, theta)
    grad = np.zeros(circuit.d)
    for k, (_, _, a) in enumerate(ops):
        if not isinstance(a, Free):
            continue
        vals = list(base)
        vals[k] = base[k] + math.pi / 2
        plus = cost(_run_ops(circuit.n, ops, vals))
        vals[k] = base[k] - math.pi / 2
        minus = cost(_run_ops(circuit.n, ops, vals))
        grad[a.index] += 0.5 * (plus - minus)
    return grad


def finite_difference_gradient(circuit: AnsatzCircuit, theta, cost, step: float = 1e-5) -> np.ndarray:
    theta = _check_theta(circuit, theta)
    grad = np.zeros(circuit.d)
    for j in range(circuit.d):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += step
        tm[j] -= step
        grad[j] = (cost(simulate(circuit, tp)) - cost(simulate(circuit, tm))) / (2 * step)
    return grad


def gradient(circuit: AnsatzCircuit, theta, cost) -> np.ndarray:
    """d cost / d theta: parameter shift for energies, central differences for infidelity."""
    if isinstance(cost, EnergyCost):
        return parameter_shift_gradient(circuit, theta, cost)
    return finite_difference_gradient(circuit, theta, cost)


_GENERATORS = {
    "RX": _X,
    "RY": np.array([[0, -1j], [1j, 0]]),
    "RZ": np.diag([1.0 + 0j, -1.0]),
}


def infidelity_and_gradient(circuit: AnsatzCircuit, theta, target: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - |<psi(theta)|target>| and its exact gradient by one adjoint sweep."""
    theta = _check_theta(circuit, theta)
    n = circuit.n
    ops = _elementary_ops(circuit)
    vals = _slot_values(ops, theta)
    mats = [None if kind == "CNOT" else gate_matrix(kind, (a,)) for (kind, _, _), a in zip(ops, vals)]

    phi = zero_state(n)
    for (kind, qubits, _), U in zip(ops, mats):
        phi = apply_cnot(phi, qubits[0], qubits[1], n) if U is None else apply_1q(phi, U, qubits[0])
    amp = np.vdot(target, phi)
    fid = abs(amp)
    grad = np.zeros(circuit.d)
    lam = target.astype(complex, copy=True)
    for (kind, qubits, a), U in zip(reversed(ops), reversed(mats)):
        if isinstance(a, Free):
            d_amp = -0.5j * np.vdot(lam, apply_1q(phi, _GENERATORS[kind], qubits[0]))
            if fid > 0:
                grad[a.index] -= (np.conj(amp) * d_amp).real / fid
        if U is None:
            # CNOT is self-inverse
            phi = apply_cnot(phi, qubits[0], qubits[1], n)
            lam = apply_cnot(lam, qubits[0], qubits[1], n)
        else:
            Ud = U.conj().T
            phi = apply_1q(phi, Ud, qubits[0])
            lam = apply_1q(lam, Ud, qubits[0])
    return 1.0 - min(fid, 1.0), grad


# --- ansatz file format ------------------------------------------------------

def ansatz_to_dict(circuit: AnsatzCircuit) -> dict:
    gates = []
    for g in circuit.gates:
        angles = [{"free": a.index} if isinstance(a, Free) else {"fixed": float(a.value)} for a in g.angles]
        gates.append({"kind": g.kind, "qubits": list(g.qubits), "angles": angles})
    return {"n": circuit.n, "d": circuit.d, "gates": gates}


def ansatz_from_dict(doc: dict) -> AnsatzCircuit:
    try:
        gates = []
        for k, raw in enumerate(doc["gates"]):
            angles = []
            for slot in raw.get("angles", []):
                if "free" in slot:
                    angles.append(Free(int(slot["free"])))
                elif "fixed" in slot:
                    angles.append(Fixed(float(slot["fixed"])))
                else:
                    raise ValueError(f"gates[{k}]: angle slot needs 'free' or 'fixed'")
            gates.append(Gate(str(raw["kind"]).upper(), tuple(raw["qubits"]), tuple(angles)))
        return AnsatzCircuit(int(doc["n"]), tuple(gates), int(doc["d"]))
    except KeyError as exc:
        raise ValueError(f"ansatz document missing key {exc}") from exc


def save_ansatz_file(circuit: AnsatzCircuit, path, extra: dict | None = None) -> None:
    doc = ansatz_to_dict(circuit)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_ansatz_file(path) -> AnsatzCircuit:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return ansatz_from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"{path}: {exc}") from exc
