import numpy as np
import pytest

from bois.circuit import AnsatzCircuit, Free, Gate
from bois.pauli import PhysicalGrid, build_spin_chain


@pytest.fixture
def chain15():
    return build_spin_chain(4, PhysicalGrid.linspace(0.0, 0.9, 15))


def ladder_ansatz(n=4):
    """RY layer, CNOT ladder, RY layer: 2n parameters."""
    gates, k = [], 0
    for q in range(n):
        gates.append(Gate("RY", (q,), (Free(k),)))
        k += 1
    for q in range(n - 1):
        gates.append(Gate("CNOT", (q, q + 1)))
    for q in range(n):
        gates.append(Gate("RY", (q,), (Free(k),)))
        k += 1
    return AnsatzCircuit(n, gates, k)


@pytest.fixture
def ladder():
    return ladder_ansatz()


def random_circuit(rng, n, n_gates, kinds=("RX", "RY", "RZ", "U3", "CNOT", "X")):
    gates, k = [], 0
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        if kind == "CNOT":
            if n < 2:
                continue
            a, b = rng.choice(n, 2, replace=False)
            gates.append(Gate("CNOT", (int(a), int(b))))
        elif kind == "X":
            gates.append(Gate("X", (int(rng.integers(n)),)))
        else:
            n_ang = 3 if kind == "U3" else 1
            gates.append(Gate(kind, (int(rng.integers(n)),), tuple(Free(k + j) for j in range(n_ang))))
            k += n_ang
    if k == 0:
        gates.append(Gate("RY", (0,), (Free(0),)))
        k = 1
    return AnsatzCircuit(n, gates, k)


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
