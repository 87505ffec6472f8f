"""Small-matrix quantum mechanics for the weak-measurement chain.

Composite states are ordered system-outer, ancilla-inner: basis index
``2 * i_system + i_ancilla``. Every function here takes and returns plain
complex ``numpy`` arrays; states are validated at the boundary.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    IncompleteProjectorsError,
    InvalidStateError,
    UnknownObservableError,
    ZeroProbabilityError,
)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
EIGEN_TOL = -1e-10
UNITARY_TOL = 1e-10
ZERO_PROB = 1e-14

I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)
YY = np.kron(SIGMA_Y, SIGMA_Y)


def _as_square(mat, dims=(2, 4)):
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] not in dims:
        raise DimensionError(f"expected a square matrix of size in {dims}, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidStateError("matrix has non-finite entries")
    return mat


def check_density(rho, dims=(2, 4)):
    """Validate ``rho`` as a density matrix and return it as a complex array.

    Raises
    ------
    DimensionError
        Not square or of an unsupported size.
    InvalidStateError
        Not Hermitian, not unit trace, or has an eigenvalue below -1e-10.
    """
    rho = _as_square(rho, dims)
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"trace is {np.trace(rho).real!r}, expected 1")
    if np.linalg.eigvalsh(rho).min() < EIGEN_TOL:
        raise InvalidStateError("density matrix has a negative eigenvalue")
    return rho


def is_density(rho, dims=(2, 4)):
    try:
        check_density(rho, dims)
    except (InvalidStateError, DimensionError):
        return False
    return True


def _hermitize(mat):
    return 0.5 * (mat + mat.conj().T)


def bloch_to_density(theta):
    """Qubit density matrix (I + theta . sigma) / 2."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (3,):
        raise DimensionError(f"Bloch vector must have 3 components, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InvalidStateError("Bloch vector has non-finite components")
    if np.linalg.norm(theta) > 1.0 + 1e-12:
        raise InvalidStateError(f"Bloch vector norm {np.linalg.norm(theta)!r} exceeds 1")
    return 0.5 * (I2 + theta[0] * SIGMA_X + theta[1] * SIGMA_Y + theta[2] * SIGMA_Z)


def density_to_bloch(rho):
    rho = _as_square(rho, dims=(2,))
    return np.array([np.trace(rho @ p).real for p in PAULI])


def kron(a, b):
    """Composite state a (system) tensor b (ancilla)."""
    a = _as_square(a, dims=(2,))
    b = _as_square(b, dims=(2,))
    return np.kron(a, b)


def partial_trace(rho, keep="system"):
    """Reduce a two-qubit state to the ``system`` or ``ancilla`` factor."""
    rho = _as_square(rho, dims=(4,))
    t = rho.reshape(2, 2, 2, 2)  # (s, m, s', m')
    if keep == "system":
        return np.einsum("ijkj->ik", t)
    if keep == "ancilla":
        return np.einsum("ijil->jl", t)
    raise ValueError(f"keep must be 'system' or 'ancilla', got {keep!r}")


def coupling_unitary(a_y, h):
    """exp(-i h a_y sigma_y (x) sigma_y).

    Uses (sigma_y (x) sigma_y)^2 = I, so the exponential is
    cos(a) I - i sin(a) sigma_y (x) sigma_y with a = a_y h.
    """
    alpha = float(a_y) * float(h)
    return np.cos(alpha) * I4 - 1j * np.sin(alpha) * YY


def swap_like_unitary(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array(
        [
            [c, 0, 0, s],
            [0, 1, 0, 0],
            [0, 0, 1, 0],
            [-s, 0, 0, c],
        ],
        dtype=complex,
    )


def is_unitary(w, tol=UNITARY_TOL):
    w = np.asarray(w, dtype=complex)
    return np.max(np.abs(w @ w.conj().T - np.eye(w.shape[0]))) <= tol


def evolve(rho, w):
    """Unitary evolution W rho W^dagger."""
    rho = check_density(rho)
    w = _as_square(w)
    if w.shape != rho.shape:
        raise DimensionError(f"operator shape {w.shape} does not match state shape {rho.shape}")
    if not is_unitary(w):
        raise ContractError("evolution operator is not unitary")
    return _hermitize(w @ rho @ w.conj().T)


@dataclass(frozen=True)
class Projector:
    mat: np.ndarray
    label: int


@dataclass(frozen=True)
class MeasurementOutcome:
    label: int
    probability: float
    post_state: np.ndarray


_ANCILLA_PROJECTORS = {
    "x": (0.5 * np.array([[1, 1], [1, 1]], dtype=complex), 0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)),
    "z": (np.array([[1, 0], [0, 0]], dtype=complex), np.array([[0, 0], [0, 1]], dtype=complex)),
}


def projector_set(observable):
    """Eigenprojections (+1, -1) of sigma_x or sigma_z on the ancilla, as I (x) P."""
    try:
        plus, minus = _ANCILLA_PROJECTORS[observable]
    except KeyError:
        raise UnknownObservableError(f"unknown observable {observable!r}; expected 'x' or 'z'") from None
    return Projector(np.kron(I2, plus), +1), Projector(np.kron(I2, minus), -1)


def measure(rho, p):
    """Outcome probability Tr(rho P) and the state P rho P / Tr(rho P)."""
    rho = check_density(rho)
    if p.mat.shape != rho.shape:
        raise DimensionError(f"projector shape {p.mat.shape} does not match state shape {rho.shape}")
    prob = float(np.trace(rho @ p.mat).real)
    if prob < ZERO_PROB:
        raise ZeroProbabilityError(f"outcome {p.label:+d} has probability {prob!r}")
    post = _hermitize(p.mat @ rho @ p.mat) / prob
    return MeasurementOutcome(p.label, min(prob, 1.0), post)


def outcome_probabilities(rho, projectors):
    return np.array([np.trace(rho @ p.mat).real for p in projectors])


def check_complete(projectors):
    total = sum(p.mat for p in projectors)
    if np.max(np.abs(total - np.eye(total.shape[0]))) > 1e-12:
        raise IncompleteProjectorsError("projectors do not sum to the identity")


def sample_outcome(rho, projectors, rng):
    """Draw one outcome by the Born rule.

    Consumes exactly one ``rng.random()`` draw ``u``; the first projector
    whose cumulative probability exceeds ``u`` is selected.
    """
    check_complete(projectors)
    rho = check_density(rho)
    probs = np.clip(outcome_probabilities(rho, projectors), 0.0, None)
    u = rng.random()
    acc = 0.0
    chosen = projectors[-1]
    for p, pr in zip(projectors, probs):
        acc += pr
        if u < acc:
            chosen = p
            break
    return measure(rho, chosen)


def random_density(rng, dim=4, rank=None):
    """Random density matrix from a Ginibre ensemble."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return _hermitize(rho / np.trace(rho).real)


def random_unitary(rng, dim=4):
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_bloch(rng, radius=None):
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * (rng.random() ** (1 / 3) if radius is None else radius)


class WeakMeasurementChain:
    """Repeated indirect measurement of a system qubit through fresh ancillas.

    Each step composes the current system state with the ancilla state,
    applies ``w``, samples an ancilla outcome, and keeps the reduced system
    state of the post-measurement composite.
    """

    def __init__(self, rho_system, rho_ancilla, w, observable="x"):
        self.rho_system = check_density(rho_system, dims=(2,))
        self.rho_ancilla = check_density(rho_ancilla, dims=(2,))
        if not is_unitary(_as_square(w, dims=(4,))):
            raise ContractError("evolution operator is not unitary")
        self.w = np.asarray(w, dtype=complex)
        self.projectors = projector_set(observable)

    def composite(self):
        return kron(self.rho_system, self.rho_ancilla)

    def probabilities(self):
        return outcome_probabilities(evolve(self.composite(), self.w), self.projectors)

    def step(self, rng):
        outcome = sample_outcome(evolve(self.composite(), self.w), self.projectors, rng)
        self.rho_system = _hermitize(partial_trace(outcome.post_state, keep="system"))
        return outcome

    def run(self, n_steps, rng):
        return np.array([self.step(rng).label for _ in range(n_steps)], dtype=int)
