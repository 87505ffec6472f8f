"""Spin-3/2 qudit as a pair of "artificial qubits".

Levels 1, 2, 3, 4 are labelled m = 3/2, 1/2, -1/2, -3/2. Under the fixed
system-outer ordering, level index ``2 * i + j`` corresponds to artificial
system qubit ``i`` and artificial ancilla qubit ``j``, so the first
artificial qubit sums level pairs {3/2, 1/2} / {-1/2, -3/2} and the second
sums {3/2, -1/2} / {1/2, -3/2}.
"""

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .quantum import (
    _hermitize,
    check_density,
    evolve,
    kron,
    outcome_probabilities,
    projector_set,
    sample_outcome,
)

LABELS = (Fraction(3, 2), Fraction(1, 2), Fraction(-1, 2), Fraction(-3, 2))
_INDEX = {m: i for i, m in enumerate(LABELS)}

# named two-way partitions of the four levels
PARTITIONS = {
    "first": ((Fraction(3, 2), Fraction(1, 2)), (Fraction(-1, 2), Fraction(-3, 2))),
    "second": ((Fraction(3, 2), Fraction(-1, 2)), (Fraction(1, 2), Fraction(-3, 2))),
}


def label_index(m):
    """Matrix index (0-based) of spin projection ``m``."""
    try:
        return _INDEX[Fraction(m)]
    except (KeyError, ValueError, TypeError):
        raise KeyError(f"{m!r} is not a spin-3/2 projection") from None


@dataclass(frozen=True)
class QuditState:
    mat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mat", check_density(self.mat, dims=(4,)))

    def element(self, m1, m2):
        return self.mat[label_index(m1), label_index(m2)]

    def populations(self):
        """Dict label -> population."""
        return {m: float(self.mat[i, i].real) for i, m in enumerate(LABELS)}

    def to_json(self):
        return {
            "labels": [str(m) for m in LABELS],
            "real": self.mat.real.tolist(),
            "imag": self.mat.imag.tolist(),
        }

    @classmethod
    def from_json(cls, data):
        labels = [Fraction(s) for s in data["labels"]]
        if tuple(labels) != LABELS:
            raise ValueError(f"unexpected label order {data['labels']}")
        return cls(np.asarray(data["real"], dtype=float) + 1j * np.asarray(data["imag"], dtype=float))


def relabel(rho):
    """Attach the half-integer labels to a 4x4 density matrix (entries unchanged)."""
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise DimensionError(f"qudit state must be 4x4, got {rho.shape}")
    return QuditState(np.array(rho, dtype=complex))


def unrelabel(q):
    return np.array(q.mat)


def artificial_qubits(q):
    """The two 2x2 artificial-qubit states, built from explicit element sums."""
    r = q.element
    h, l, ml, mh = LABELS  # 3/2, 1/2, -1/2, -3/2
    first = np.array(
        [
            [r(h, h) + r(l, l), r(h, ml) + r(l, mh)],
            [r(ml, h) + r(mh, l), r(ml, ml) + r(mh, mh)],
        ]
    )
    second = np.array(
        [
            [r(h, h) + r(ml, ml), r(h, l) + r(ml, mh)],
            [r(l, h) + r(mh, ml), r(l, l) + r(mh, mh)],
        ]
    )
    return first, second


def save_qudit(q, path):
    Path(path).write_text(json.dumps(q.to_json(), indent=2) + "\n")


def load_qudit(path):
    return QuditState.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CoarseGraining:
    partition: tuple
    probabilities: tuple


def _partition(partition):
    if isinstance(partition, str):
        try:
            partition = PARTITIONS[partition]
        except KeyError:
            raise ValueError(f"unknown partition {partition!r}") from None
    try:
        sides = tuple(tuple(Fraction(m) for m in side) for side in partition)
    except (TypeError, ValueError):
        raise ValueError(f"malformed partition {partition!r}") from None
    flat = [m for side in sides for m in side]
    if len(sides) != 2 or any(len(s) != 2 for s in sides) or sorted(flat) != sorted(LABELS):
        raise ValueError(f"partition must split the four levels into two pairs, got {partition!r}")
    return sides


def _probs(probs):
    p = np.asarray(probs, dtype=float)
    if p.shape != (4,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("expected 4 non-negative probabilities summing to 1")
    return p


def coarse_grain(probs, partition):
    """Merge level probabilities (ordered 3/2 .. -3/2) into the two partition sides."""
    p = _probs(probs)
    sides = _partition(partition)
    merged = tuple(float(sum(p[label_index(m)] for m in side)) for side in sides)
    return CoarseGraining(sides, merged)


def coarse_correlation(probs, part_a, part_b):
    """Covariance of the +-1 variables attached to two partitions."""
    p = _probs(probs)

    def signs(part):
        plus, minus = _partition(part)
        v = np.zeros(4)
        v[[label_index(m) for m in plus]] = 1.0
        v[[label_index(m) for m in minus]] = -1.0
        return v

    a, b = signs(part_a), signs(part_b)
    return float(p @ (a * b) - (p @ a) * (p @ b))


def is_product(q, tol=1e-12):
    s, m = artificial_qubits(q)
    return bool(np.max(np.abs(kron(s, m) - q.mat)) <= tol)


class QuditChain:
    """Weak-measurement chain on a single qudit.

    The artificial ancilla (second artificial qubit) plays the measured
    probe. Each step evolves the full 4x4 state, samples an ancilla outcome,
    and then re-prepares the ancilla levels in their initial state while
    keeping the first artificial qubit's post-measurement state. With
    ``reset_ancilla=False`` the full post-measurement state is carried
    instead. ``regime`` records whether the initial state factorises.
    """

    def __init__(self, q, w, observable="x", reset_ancilla=True):
        self.state = q if isinstance(q, QuditState) else relabel(q)
        self.w = np.asarray(w, dtype=complex)
        self.projectors = projector_set(observable)
        self.reset_ancilla = reset_ancilla
        self.ancilla_ref = artificial_qubits(self.state)[1]
        self.regime = "product" if is_product(self.state) else "correlated"

    def probabilities(self):
        return outcome_probabilities(evolve(self.state.mat, self.w), self.projectors)

    def step(self, rng):
        outcome = sample_outcome(evolve(self.state.mat, self.w), self.projectors, rng)
        if self.reset_ancilla:
            system = artificial_qubits(relabel(outcome.post_state))[0]
            self.state = relabel(_hermitize(kron(system, self.ancilla_ref)))
        else:
            self.state = relabel(outcome.post_state)
        return outcome

    def system_state(self):
        return artificial_qubits(self.state)[0]

    def run(self, n_steps, rng):
        return np.array([self.step(rng).label for _ in range(n_steps)], dtype=int)


def qudit_observation_model(q, evolution, observable="x", reset_ancilla=True):
    """Bind a qudit state and evolution into a measurement chain.

    The returned chain exposes the same ``step`` / ``run`` / ``probabilities``
    surface as :class:`qfilter.quantum.WeakMeasurementChain`.
    """
    return QuditChain(q, evolution, observable, reset_ancilla)
