"""Exact diagonalization of small Hamiltonians for reference energies and target states."""

from __future__ import annotations

from functools import reduce

import numpy as np

from .pauli import ParameterizedHamiltonian, PauliString

MAX_DENSE_QUBITS = 12

_SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli_matrix(pauli: PauliString | str) -> np.ndarray:
    """Kronecker product of single-qubit Paulis; qubit 0 is the rightmost factor."""
    ops = pauli.ops if isinstance(pauli, PauliString) else pauli
    if len(ops) > MAX_DENSE_QUBITS:
        raise ValueError(f"dense matrices limited to {MAX_DENSE_QUBITS} qubits")
    return reduce(np.kron, [_SIGMA[c] for c in reversed(ops)])


def dense_matrix(H: ParameterizedHamiltonian, alpha: int) -> np.ndarray:
    if H.n > MAX_DENSE_QUBITS:
        raise ValueError(f"{H.n} qubits exceeds the dense limit of {MAX_DENSE_QUBITS}")
    dim = 1 << H.n
    M = np.zeros((dim, dim), dtype=complex)
    for c, p in zip(H.coeffs[alpha], H.paulis):
        if c != 0.0:
            M += c * pauli_matrix(p)
    return M


def ground_state(matrix: np.ndarray) -> tuple[float, np.ndarray]:
    """Lowest eigenpair; the largest-magnitude amplitude is made real positive."""
    evals, evecs = np.linalg.eigh(matrix)
    psi = evecs[:, 0]
    k = int(np.argmax(np.abs(psi)))
    psi = psi * (abs(psi[k]) / psi[k])
    psi = psi / np.linalg.norm(psi)
    return float(evals[0]), psi


def spectral_gap(matrix: np.ndarray) -> float:
    evals = np.linalg.eigvalsh(matrix)
    return float(evals[1] - evals[0]) if len(evals) > 1 else np.inf


def exact_energies(H: ParameterizedHamiltonian) -> np.ndarray:
    return np.array([ground_state(dense_matrix(H, a))[0] for a in range(H.grid.size)])
