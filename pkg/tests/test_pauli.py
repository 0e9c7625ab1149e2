import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bois.pauli import (
    HamiltonianFormatError,
    ParameterizedHamiltonian,
    PauliString,
    PhysicalGrid,
    build_spin_chain,
    energy_from_expectations,
    hamiltonian_from_dict,
    hamiltonian_to_dict,
    load_hamiltonian_file,
    save_hamiltonian_file,
)


def test_pauli_parse_and_masks():
    p = PauliString.parse(" xyzi ")
    assert p.ops == "XYZI" and p.n == 4
    assert p.support() == (0, 1, 2)
    x, z, ny = p.masks()
    assert x == 0b0011 and z == 0b0110 and ny == 1
    assert PauliString("III").is_identity
    assert PauliString.single(3, 1, "X").ops == "IXI"


@pytest.mark.parametrize("bad", ["", "XQ", "ab"])
def test_pauli_rejects_bad_labels(bad):
    with pytest.raises(ValueError):
        PauliString.parse(bad)


def test_grid_row_major_and_validation():
    g = PhysicalGrid(((0.0, 1.0), (10.0, 20.0, 30.0)))
    assert g.size == 6 and g.shape == (2, 3)
    assert g.points()[4] == (1.0, 20.0)
    assert g.point(4) == (1.0, 20.0)
    assert g.index(4) == (1, 1) and g.flat_index((1, 1)) == 4
    with pytest.raises(ValueError):
        PhysicalGrid(((1.0, 0.5),))
    with pytest.raises(ValueError):
        PhysicalGrid(((0.0,), (1.0,), (2.0,)))
    with pytest.raises(IndexError):
        g.point(6)


def test_spin_chain_terms_and_coefficients():
    H = build_spin_chain(4, PhysicalGrid.linspace(0.0, 0.9, 15))
    # 3 bonds, 4 X fields, 4 Z fields
    assert len(H.paulis) == 11
    assert H.labels[:3] == ["ZZII", "IZZI", "IIZZ"]
    assert H.labels[3:7] == ["XIII", "IXII", "IIXI", "IIIX"]
    assert H.labels[7:] == ["ZIII", "IZII", "IIZI", "IIIZ"]
    h = H.grid.point(5)[0]
    assert np.allclose(H.coeffs[5], [1, 1, 1] + [-h] * 8)


def test_spin_chain_two_axis_grid():
    H = build_spin_chain(3, PhysicalGrid(((0.1, 0.2), (0.5, 0.7))))
    a = H.grid.flat_index((1, 0))
    assert np.allclose(H.coeffs[a, 2:5], -0.2)  # X fields
    assert np.allclose(H.coeffs[a, 5:], -0.5)  # Z fields


def test_hamiltonian_is_read_only():
    H = build_spin_chain(2, PhysicalGrid.linspace(0, 1, 3))
    with pytest.raises(ValueError):
        H.coeffs[0, 0] = 5.0


def test_energy_from_expectations_and_shape_check():
    H = build_spin_chain(2, PhysicalGrid.linspace(0, 1, 3))
    e = np.arange(len(H.paulis), dtype=float)
    assert energy_from_expectations(H, 2, e) == pytest.approx(H.coeffs[2] @ e)
    assert np.allclose(H.energies(e), H.coeffs @ e)
    with pytest.raises(ValueError):
        H.energy(0, e[:-1])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=5, max_size=5),
    st.lists(st.floats(-1, 1), min_size=5, max_size=5),
    st.floats(-3, 3),
)
def test_cross_evaluation_is_linear(e1, e2, s):
    H = build_spin_chain(2, PhysicalGrid.linspace(0, 1, 4))
    e1, e2 = np.array(e1), np.array(e2)
    assert np.allclose(H.energies(e1 + s * e2), H.energies(e1) + s * H.energies(e2), atol=1e-9)


def test_file_roundtrip_exact(tmp_path):
    H = build_spin_chain(3, PhysicalGrid.linspace(0.0, 0.9, 7))
    path = tmp_path / "h.json"
    save_hamiltonian_file(H, path)
    G = load_hamiltonian_file(path)
    # loading sorts labels lexicographically; compare as label -> column
    for i, lab in enumerate(H.labels):
        assert np.array_equal(G.coeffs[:, G.term_index(lab)], H.coeffs[:, i])
    assert G.grid == H.grid


def test_padding_and_label_order():
    doc = {
        "n": 2,
        "axes": [[0.0, 1.0, 2.0]],
        "terms": [
            {"pauli": "ZZ", "coeffs": [1.0, 1.0, 1.0]},
            {"pauli": "XI", "coeffs": {"1": -0.5}},
            {"pauli": "IX", "coeffs": [None, 0.25, None]},
        ],
    }
    H = hamiltonian_from_dict(doc)
    assert H.labels == ["IX", "XI", "ZZ"]
    assert np.allclose(H.coeffs, [[0, 0, 1], [0.25, -0.5, 1], [0, 0, 1]])


@pytest.mark.parametrize(
    "terms, message",
    [
        ([{"pauli": "ZZ", "coeffs": [1]}, {"pauli": "zz", "coeffs": [2]}], "duplicate"),
        ([{"pauli": "ZZZ", "coeffs": [1]}], "3 qubits"),
        ([{"pauli": "ZZ", "coeffs": [1, 2]}], "2 coefficients"),
        ([{"pauli": "ZZ", "coeffs": {"4": 1}}], "out of range"),
        ([{"pauli": "ZZ", "coeffs": ["a"]}], "non-numeric"),
        ([{"pauli": "ZQ", "coeffs": [1]}], "terms[0]"),
    ],
)
def test_format_errors_name_the_record(terms, message):
    with pytest.raises(HamiltonianFormatError, match=message.replace("[", r"\[").replace("]", r"\]")):
        hamiltonian_from_dict({"n": 2, "axes": [[0.0]], "terms": terms})


def test_json_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "n": 2,\n "axes": [[0.0]]\n "terms": []\n}\n')
    with pytest.raises(HamiltonianFormatError, match="line 4"):
        load_hamiltonian_file(path)


def test_document_roundtrip_through_json():
    H = build_spin_chain(2, PhysicalGrid(((0.0, 0.5), (1.0, 2.0)), ("hx", "hz")))
    G = hamiltonian_from_dict(json.loads(json.dumps(hamiltonian_to_dict(H))))
    assert G.grid.axis_names == ("hx", "hz")
    assert isinstance(G, ParameterizedHamiltonian)
