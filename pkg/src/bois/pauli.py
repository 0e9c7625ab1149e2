"""Pauli strings, physical parameter grids and parameterized Hamiltonians.

A family of qubit Hamiltonians H(x) = sum_i c_i(x) P_i is stored as one shared
list of Pauli strings plus a dense coefficient table ``coeffs[alpha, i]`` with
one row per grid point.  Measuring the Pauli expectations once at some circuit
parameters then gives the energy at *every* grid point through a dot product,
which is what makes cross-evaluation between optimizers free.

Qubit convention: character ``k`` of a label acts on qubit ``k``, and qubit 0 is
the least significant bit of a statevector index.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PAULI_CHARS = "IXYZ"


class HamiltonianFormatError(ValueError):
    """Raised when a Hamiltonian file cannot be parsed or is inconsistent."""


@dataclass(frozen=True)
class PauliString:
    """An n-qubit tensor product of single-qubit Paulis, e.g. ``"ZZII"``."""

    ops: str

    def __post_init__(self):
        if len(self.ops) < 1:
            raise ValueError("Pauli string must act on at least one qubit")
        bad = set(self.ops) - set(PAULI_CHARS)
        if bad:
            raise ValueError(f"invalid Pauli characters {sorted(bad)} in {self.ops!r}")

    @classmethod
    def parse(cls, text: str) -> "PauliString":
        return cls(text.strip().upper())

    @classmethod
    def single(cls, n: int, qubit: int, op: str) -> "PauliString":
        chars = ["I"] * n
        chars[qubit] = op
        return cls("".join(chars))

    @property
    def n(self) -> int:
        return len(self.ops)

    @property
    def is_identity(self) -> bool:
        return set(self.ops) == {"I"}

    def support(self) -> tuple[int, ...]:
        return tuple(k for k, c in enumerate(self.ops) if c != "I")

    def masks(self) -> tuple[int, int, int]:
        """Bit masks ``(x_mask, z_mask, n_y)`` of the binary-symplectic form.

        ``x_mask`` flags qubits carrying X or Y, ``z_mask`` those with Z or Y,
        and ``n_y`` counts the Y factors.
        """
        x_mask = z_mask = 0
        n_y = 0
        for k, c in enumerate(self.ops):
            if c in "XY":
                x_mask |= 1 << k
            if c in "ZY":
                z_mask |= 1 << k
            if c == "Y":
                n_y += 1
        return x_mask, z_mask, n_y

    def __str__(self) -> str:
        return self.ops


@dataclass(frozen=True)
class PhysicalGrid:
    """Cartesian product of one or two strictly increasing coordinate axes.

    Points are enumerated in row-major order over the axes, so for a 2D grid
    ``alpha = i * len(axes[1]) + j``.
    """

    axes: tuple[tuple[float, ...], ...]
    axis_names: tuple[str, ...] = ()

    def __post_init__(self):
        axes = tuple(tuple(float(v) for v in ax) for ax in self.axes)
        object.__setattr__(self, "axes", axes)
        if len(axes) not in (1, 2):
            raise ValueError(f"grid must have 1 or 2 axes, got {len(axes)}")
        for k, ax in enumerate(axes):
            if len(ax) == 0:
                raise ValueError(f"axis {k} is empty")
            if any(not math.isfinite(v) for v in ax):
                raise ValueError(f"axis {k} has non-finite values")
            if any(b <= a for a, b in zip(ax, ax[1:])):
                raise ValueError(f"axis {k} is not strictly increasing")
        names = tuple(self.axis_names) or tuple(f"x{k}" for k in range(len(axes)))
        if len(names) != len(axes):
            raise ValueError("axis_names length does not match number of axes")
        object.__setattr__(self, "axis_names", names)

    @classmethod
    def linspace(cls, start: float, stop: float, num: int, name: str = "h") -> "PhysicalGrid":
        return cls((tuple(np.linspace(start, stop, num)),), (name,))

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def __len__(self) -> int:
        return self.size

    def index(self, alpha: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(alpha, self.shape))

    def flat_index(self, idx: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def point(self, alpha: int) -> tuple[float, ...]:
        if not 0 <= alpha < self.size:
            raise IndexError(f"grid index {alpha} out of range for {self.size} points")
        return tuple(ax[i] for ax, i in zip(self.axes, self.index(alpha)))

    def points(self) -> list[tuple[float, ...]]:
        return [tuple(p) for p in itertools.product(*self.axes)]


@dataclass(frozen=True, eq=False)
class ParameterizedHamiltonian:
    """H(x_alpha) = sum_i coeffs[alpha, i] * paulis[i] on a physical grid."""

    paulis: tuple[PauliString, ...]
    grid: PhysicalGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        paulis = tuple(p if isinstance(p, PauliString) else PauliString.parse(p) for p in self.paulis)
        object.__setattr__(self, "paulis", paulis)
        if not paulis:
            raise ValueError("Hamiltonian needs at least one Pauli term")
        n = paulis[0].n
        if any(p.n != n for p in paulis):
            raise ValueError("all Pauli strings must have the same qubit count")
        if len({p.ops for p in paulis}) != len(paulis):
            raise ValueError("duplicate Pauli strings")
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.grid.size, len(paulis)):
            raise ValueError(
                f"coefficient table has shape {coeffs.shape}, expected {(self.grid.size, len(paulis))}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n(self) -> int:
        return self.paulis[0].n

    @property
    def labels(self) -> list[str]:
        return [p.ops for p in self.paulis]

    def term_index(self, label: str) -> int:
        return self.labels.index(label)

    def energy(self, alpha: int, expectations) -> float:
        return energy_from_expectations(self, alpha, expectations)

    def energies(self, expectations) -> np.ndarray:
        """Energies at every grid point from one expectation vector."""
        e = _check_expectations(self, expectations)
        return self.coeffs @ e


def _check_expectations(H: ParameterizedHamiltonian, expectations) -> np.ndarray:
    e = np.asarray(getattr(expectations, "values", expectations), dtype=float)
    if e.shape != (len(H.paulis),):
        raise ValueError(
            f"expectation vector has shape {e.shape}, Hamiltonian has {len(H.paulis)} terms"
        )
    return e


def energy_from_expectations(H: ParameterizedHamiltonian, alpha: int, expectations) -> float:
    """Cost of grid point ``alpha`` from Pauli expectations aligned with ``H.paulis``.

    The same expectation vector serves every grid point; this is the
    cross-evaluation primitive.
    """
    e = _check_expectations(H, expectations)
    return float(H.coeffs[alpha] @ e)


def build_spin_chain(n: int, grid: PhysicalGrid) -> ParameterizedHamiltonian:
    """Open Ising chain  sum Z_i Z_{i+1} - sum_i (h_X X_i + h_Z Z_i).

    A one-axis grid is read as a common field h = h_X = h_Z; a two-axis grid
    as (h_X, h_Z).
    """
    if n < 2:
        raise ValueError(f"spin chain needs at least 2 qubits, got {n}")
    bonds = [PauliString("I" * i + "ZZ" + "I" * (n - i - 2)) for i in range(n - 1)]
    xs = [PauliString.single(n, i, "X") for i in range(n)]
    zs = [PauliString.single(n, i, "Z") for i in range(n)]
    coeffs = np.empty((grid.size, 3 * n - 1))
    for alpha, x in enumerate(grid.points()):
        h_x, h_z = (x[0], x[0]) if grid.dims == 1 else x
        coeffs[alpha] = [1.0] * (n - 1) + [-h_x] * n + [-h_z] * n
    return ParameterizedHamiltonian(tuple(bonds + xs + zs), grid, coeffs)


def hamiltonian_to_dict(H: ParameterizedHamiltonian) -> dict:
    return {
        "n": H.n,
        "axes": [list(ax) for ax in H.grid.axes],
        "axis_names": list(H.grid.axis_names),
        "terms": [
            {"pauli": p.ops, "coeffs": [float(c) for c in H.coeffs[:, i]]}
            for i, p in enumerate(H.paulis)
        ],
    }


def save_hamiltonian_file(H: ParameterizedHamiltonian, path) -> None:
    # json writes floats with repr(), which round-trips exactly (17 significant digits)
    Path(path).write_text(json.dumps(hamiltonian_to_dict(H), indent=1) + "\n")


def hamiltonian_from_dict(doc: dict) -> ParameterizedHamiltonian:
    """Validate a Hamiltonian document and build the padded, sorted family.

    ``coeffs`` of a term is either a list with one entry per grid point
    (``null`` meaning absent) or a mapping ``{point index: value}``.  Absent
    entries are padded with zero; labels are merged in lexicographic order.
    """
    if not isinstance(doc, dict):
        raise HamiltonianFormatError("Hamiltonian document must be a JSON object")
    for key in ("n", "axes", "terms"):
        if key not in doc:
            raise HamiltonianFormatError(f"missing required key {key!r}")
    n = doc["n"]
    if not isinstance(n, int) or n < 1:
        raise HamiltonianFormatError(f"'n' must be a positive integer, got {n!r}")
    try:
        grid = PhysicalGrid(tuple(tuple(ax) for ax in doc["axes"]), tuple(doc.get("axis_names", ())))
    except (TypeError, ValueError) as exc:
        raise HamiltonianFormatError(f"invalid 'axes': {exc}") from exc

    columns: dict[str, np.ndarray] = {}
    for k, term in enumerate(doc["terms"]):
        where = f"terms[{k}]"
        if not isinstance(term, dict) or "pauli" not in term or "coeffs" not in term:
            raise HamiltonianFormatError(f"{where}: expected an object with 'pauli' and 'coeffs'")
        try:
            p = PauliString.parse(term["pauli"])
        except (AttributeError, ValueError) as exc:
            raise HamiltonianFormatError(f"{where}: {exc}") from exc
        if p.n != n:
            raise HamiltonianFormatError(f"{where}: label {p.ops!r} has {p.n} qubits, expected {n}")
        if p.ops in columns:
            raise HamiltonianFormatError(f"{where}: duplicate Pauli label {p.ops!r}")
        columns[p.ops] = _read_column(term["coeffs"], grid.size, where)
    if not columns:
        raise HamiltonianFormatError("no terms")

    labels = sorted(columns)
    coeffs = np.column_stack([columns[lab] for lab in labels])
    return ParameterizedHamiltonian(tuple(PauliString(lab) for lab in labels), grid, coeffs)


def _read_column(raw, size: int, where: str) -> np.ndarray:
    col = np.zeros(size)
    if isinstance(raw, dict):
        items = raw.items()
    elif isinstance(raw, list):
        if len(raw) != size:
            raise HamiltonianFormatError(f"{where}: {len(raw)} coefficients for {size} grid points")
        items = enumerate(raw)
    else:
        raise HamiltonianFormatError(f"{where}: 'coeffs' must be a list or an object")
    for idx, value in items:
        try:
            idx = int(idx)
        except (TypeError, ValueError) as exc:
            raise HamiltonianFormatError(f"{where}: bad point index {idx!r}") from exc
        if not 0 <= idx < size:
            raise HamiltonianFormatError(f"{where}: point index {idx} out of range")
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise HamiltonianFormatError(f"{where}: non-numeric coefficient {value!r} at point {idx}")
        col[idx] = float(value)
    return col


def load_hamiltonian_file(path) -> ParameterizedHamiltonian:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise HamiltonianFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return hamiltonian_from_dict(doc)
    except HamiltonianFormatError as exc:
        raise HamiltonianFormatError(f"{path}: {exc}") from exc
