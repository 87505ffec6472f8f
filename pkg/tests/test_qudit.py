import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qfilter.errors import DimensionError
from qfilter.quantum import (
    WeakMeasurementChain,
    bloch_to_density,
    coupling_unitary,
    kron,
    partial_trace,
    random_bloch,
    random_density,
    swap_like_unitary,
)
from qfilter.qudit import (
    LABELS,
    QuditChain,
    QuditState,
    artificial_qubits,
    coarse_correlation,
    coarse_grain,
    is_product,
    label_index,
    load_qudit,
    qudit_observation_model,
    relabel,
    save_qudit,
    unrelabel,
)

probabilities = st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda p: sum(p) > 1e-3).map(lambda p: np.array(p) / sum(p))


class FirstBranch:
    def random(self):
        return 0.0


def test_labels_and_entries(rng):
    rho = random_density(rng, 4)
    q = relabel(rho)
    assert q.element(Fraction(3, 2), Fraction(3, 2)) == rho[0, 0]
    assert q.element("-1/2", "1/2") == rho[2, 1]
    assert [label_index(m) for m in LABELS] == [0, 1, 2, 3]
    with pytest.raises(KeyError):
        label_index(Fraction(5, 2))
    assert np.array_equal(unrelabel(q), rho)


def test_relabel_rejects_bad_shape():
    with pytest.raises(DimensionError):
        relabel(np.eye(2) / 2)


def test_maximally_mixed():
    q = relabel(np.eye(4) / 4)
    assert np.array_equal(q.mat, np.eye(4) / 4)
    a, b = artificial_qubits(q)
    assert np.allclose(a, np.eye(2) / 2, atol=0) and np.allclose(b, np.eye(2) / 2, atol=0)


def test_artificial_qubits_are_partial_traces(rng):
    for _ in range(50):
        rho = random_density(rng, 4)
        a, b = artificial_qubits(relabel(rho))
        assert np.max(np.abs(a - partial_trace(rho, "system"))) < 1e-15
        assert np.max(np.abs(b - partial_trace(rho, "ancilla"))) < 1e-15


def test_product_round_trip(rng):
    for _ in range(50):
        ra, rb = random_density(rng, 2), random_density(rng, 2)
        a, b = artificial_qubits(relabel(kron(ra, rb)))
        assert np.max(np.abs(a - ra)) < 1e-12 and np.max(np.abs(b - rb)) < 1e-12


@given(probabilities)
def test_diagonal_second_qubit(p):
    _, b = artificial_qubits(relabel(np.diag(p)))
    assert np.allclose(np.diag(b).real, [p[0] + p[2], p[1] + p[3]], atol=1e-15)


@given(probabilities)
def test_coarse_grain_partitions(p):
    first = coarse_grain(p, "first").probabilities
    assert first == (p[0] + p[1], p[2] + p[3])
    second = coarse_grain(p, "second").probabilities
    assert second == (p[0] + p[2], p[1] + p[3])
    custom = coarse_grain(p, (("3/2", "-3/2"), ("1/2", "-1/2"))).probabilities
    assert custom == pytest.approx((p[0] + p[3], p[1] + p[2]), abs=1e-15)


def test_coarse_grain_uniform_and_errors():
    for part in ("first", "second"):
        assert coarse_grain(np.full(4, 0.25), part).probabilities == (0.5, 0.5)
    with pytest.raises(ValueError):
        coarse_grain([0.5, 0.5, 0.1, 0.0], "first")
    with pytest.raises(ValueError):
        coarse_grain(np.full(4, 0.25), (("3/2", "1/2"), ("3/2", "-3/2")))
    with pytest.raises(ValueError):
        coarse_grain(np.full(4, 0.25), "third")


def test_coarse_correlation():
    u, v = np.array([0.3, 0.7]), np.array([0.6, 0.4])
    product = np.outer(u, v).ravel()  # coin joint ordered 11, 12, 21, 22
    assert abs(coarse_correlation(product, "first", "second")) < 1e-12
    assert coarse_correlation([0.5, 0, 0, 0.5], "first", "second") == pytest.approx(1.0, abs=1e-15)
    assert coarse_correlation(np.full(4, 0.25), "first", "second") == 0.0


def test_json_round_trip(tmp_path, rng):
    q = relabel(random_density(rng, 4))
    save_qudit(q, tmp_path / "q.json")
    back = load_qudit(tmp_path / "q.json")
    assert np.array_equal(back.mat, q.mat)
    with pytest.raises(ValueError):
        QuditState.from_json({**q.to_json(), "labels": ["1/2", "3/2", "-1/2", "-3/2"]})


def test_regime_flag(rng):
    prod = relabel(kron(random_density(rng, 2), random_density(rng, 2)))
    assert is_product(prod) and QuditChain(prod, np.eye(4)).regime == "product"
    corr = relabel(np.diag([0.5, 0, 0, 0.5]))
    assert not is_product(corr) and QuditChain(corr, np.eye(4)).regime == "correlated"


def test_chain_matches_two_qubit_chain():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        rs, rm = bloch_to_density(random_bloch(rng)), bloch_to_density(random_bloch(rng))
        w = coupling_unitary(1.0, 0.3 + 0.1 * seed)
        two = WeakMeasurementChain(rs, rm, w, "x").run(200, np.random.default_rng(100 + seed))
        one = qudit_observation_model(relabel(kron(rs, rm)), w, "x").run(200, np.random.default_rng(100 + seed))
        assert np.array_equal(one, two)


def test_identity_evolution_constant_probabilities(rng):
    chain = QuditChain(relabel(kron(random_density(rng, 2), random_density(rng, 2))), np.eye(4), "x")
    p0 = chain.probabilities()
    for _ in range(10):
        chain.step(rng)
        assert np.allclose(chain.probabilities(), p0, atol=1e-12)


def test_decohered_diagonal_branches(rng):
    p = rng.dirichlet(np.ones(4))
    phi = 0.61
    s2, c2 = math.sin(phi) ** 2, math.cos(phi) ** 2
    chain = QuditChain(relabel(np.diag(p)), swap_like_unitary(phi), "z", reset_ancilla=False)
    out = chain.step(FirstBranch())
    top = p[3] * s2 + p[0] * c2
    assert out.label == 1
    assert np.max(np.abs(out.post_state - np.diag([top, 0, p[2], 0]) / (top + p[2]))) < 1e-12
    assert np.array_equal(chain.state.mat, out.post_state)


def test_artificial_qubits_are_states(rng):
    for _ in range(100):
        for part in artificial_qubits(relabel(random_density(rng, 4, rank=int(rng.integers(1, 5))))):
            assert np.max(np.abs(part - part.conj().T)) < 1e-15
            assert abs(np.trace(part) - 1) < 1e-12
            assert np.linalg.eigvalsh(part).min() >= -1e-10


@given(probabilities)
def test_correlation_symmetric_and_bounded(p):
    ab = coarse_correlation(p, "first", "second")
    assert ab == pytest.approx(coarse_correlation(p, "second", "first"), abs=1e-15)
    assert -1.0 - 1e-12 <= ab <= 1.0 + 1e-12
