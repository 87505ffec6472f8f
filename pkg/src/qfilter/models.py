"""Partially observed Markov models and their simulators.

Three models share one surface: ``observation_density(x, s)``,
``transition_density(s_next, s_prev)`` (where defined), ``decomposition()``
into the exponential-family factors, and a grid discretisation used by the
posterior recursion in :mod:`qfilter.filters`.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy import special, stats

from . import _kernels
from .errors import DegenerateModelError, InvalidStateError
from .quantum import WeakMeasurementChain, bloch_to_density, coupling_unitary, density_to_bloch

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite input: {v!r}")


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var - _LOG_SQRT_2PI) / np.sqrt(var)


@dataclass(frozen=True)
class ExpFamilyDecomposition:
    """f(x|s) = C_tilde(s) h(x) exp(T(x) Q(s)), plus the derivatives the
    filtering equation needs."""

    C_tilde: Callable
    h: Callable
    T: Callable
    Q: Callable
    T_prime: Callable
    h_log_prime: Callable  # d/dx ln h(x)
    Q_inverse: Callable | None = None

    def density(self, x, s):
        return self.C_tilde(s) * self.h(x) * np.exp(self.T(x) * self.Q(s))


def _gaussian_decomposition(A, B):
    var = B * B
    return ExpFamilyDecomposition(
        C_tilde=lambda s: np.exp(-0.5 * (A * s) ** 2 / var) / (math.sqrt(2.0 * math.pi) * B),
        h=lambda x: np.exp(-0.5 * np.square(x) / var),
        T=lambda x: A * np.asarray(x) / var,
        Q=lambda s: np.asarray(s, dtype=float),
        T_prime=lambda x: np.full_like(np.asarray(x, dtype=float), A / var),
        h_log_prime=lambda x: -np.asarray(x) / var,
        Q_inverse=lambda q: np.asarray(q, dtype=float),
    )


def trapezoid_weights(nodes):
    nodes = np.asarray(nodes, dtype=float)
    d = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(frozen=True)
class LinearGaussianModel:
    """s_k = a s_{k-1} + b xi_k,  x_k = A s_k + B eta_k, standard normal noises.

    Pass ``check=False`` to relax the |a| < 1, b >= 0, B > 0 invariants
    (used for degenerate test cases only).
    """

    a: float
    b: float
    A: float
    B: float
    check: bool = field(default=True, repr=False, compare=False)

    model_id = "linear"

    def __post_init__(self):
        _finite(self.a, self.b, self.A, self.B)
        if self.check:
            if not abs(self.a) < 1.0:
                raise ValueError(f"|a| must be < 1, got a={self.a}")
            if self.b < 0.0:
                raise ValueError(f"b must be >= 0, got b={self.b}")
            if not self.B > 0.0:
                raise ValueError(f"B must be > 0, got B={self.B}")

    @property
    def prior_variance(self):
        return self.b**2 / (1.0 - self.a**2)

    def params(self):
        return {"kind": self.model_id, "a": self.a, "b": self.b, "A": self.A, "B": self.B}

    def prior_density(self, s):
        return _normal_pdf(np.asarray(s, dtype=float), 0.0, self.prior_variance)

    def observation_density(self, x, s):
        _finite(x, s)
        if self.B == 0.0:
            raise DegenerateModelError("B = 0: observation is a point mass")
        return _normal_pdf(np.asarray(x, dtype=float), self.A * np.asarray(s, dtype=float), self.B**2)

    def transition_density(self, s_next, s_prev):
        _finite(s_next, s_prev)
        if self.b == 0.0:
            raise DegenerateModelError("b = 0: transition is a point mass")
        return _normal_pdf(np.asarray(s_next, dtype=float), self.a * np.asarray(s_prev, dtype=float), self.b**2)

    def decomposition(self):
        return _gaussian_decomposition(self.A, self.B)

    def grid(self, n_nodes=2001, width=8.0):
        half = width * math.sqrt(self.prior_variance)
        return np.linspace(-half, half, n_nodes)

    def transition_matrix(self, nodes):
        """K[i, j] = p(nodes[i] | nodes[j]) evaluated pointwise."""
        nodes = np.asarray(nodes, dtype=float)
        return self.transition_density(nodes[:, None], nodes[None, :])

    def kalman_coefficients(self):
        """(a, process var, A, observation var, m0, P0) for the scalar recursion."""
        return self.a, self.b**2, self.A, self.B**2, 0.0, self.prior_variance


@dataclass(frozen=True)
class QubitChainModel:
    """Block-aggregated weak-measurement chain of the system's Bloch component.

    s_k = s_{k-1} + N c^2 s_{k-1}(1 - s_{k-1}^2) + omega c (1 - s_{k-1}^2),
    x_k = N c s_k + omega_k, with omega ~ N(0, N) (variance N).
    """

    c: float
    N: int
    clamp_eps: float = 1e-6

    model_id = "qubit"

    def __post_init__(self):
        _finite(self.c, self.N, self.clamp_eps)
        if not abs(self.c) < 1.0:
            raise ValueError(f"|c| must be < 1, got c={self.c}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got N={self.N}")
        if not 0.0 < self.clamp_eps < 1.0:
            raise ValueError("clamp_eps must lie in (0, 1)")

    def params(self):
        return {"kind": self.model_id, "c": self.c, "N": int(self.N), "clamp_eps": self.clamp_eps}

    def prior_density(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) <= 1.0, 0.5, 0.0)

    @property
    def prior_variance(self):
        return 1.0 / 3.0

    def sample_s0(self, rng):
        return rng.uniform(-1.0, 1.0)

    def drift(self, s):
        s = np.asarray(s, dtype=float)
        return s + self.N * self.c**2 * s * (1.0 - s * s)

    def diffusion_std(self, s):
        s = np.asarray(s, dtype=float)
        return abs(self.c) * (1.0 - s * s) * math.sqrt(self.N)

    def observation_density(self, x, s):
        _finite(x, s)
        return _normal_pdf(np.asarray(x, dtype=float), self.N * self.c * np.asarray(s, dtype=float), float(self.N))

    def transition_density(self, s_next, s_prev):
        """Gaussian in s_next: linear-in-omega change of variables through the drift."""
        _finite(s_next, s_prev)
        std = self.diffusion_std(s_prev)
        if np.any(std == 0.0):
            raise DegenerateModelError("zero diffusion (c = 0 or |s| = 1): transition is a point mass")
        return _normal_pdf(np.asarray(s_next, dtype=float), self.drift(s_prev), std**2)

    def decomposition(self):
        return _gaussian_decomposition(self.N * self.c, math.sqrt(self.N))

    def grid(self, n_nodes=2001):
        return np.linspace(-1.0, 1.0, n_nodes)

    def transition_matrix(self, nodes):
        """Cell-integrated transition on ``nodes``, clamping mass at the ends.

        Column j holds the density (w.r.t. trapezoid weights) of the next
        state given ``nodes[j]``. Mass falling outside the grid is assigned to
        the end cells, mirroring the simulator's clamp; point-mass columns
        (zero diffusion) land in the cell containing the drift.
        """
        nodes = np.asarray(nodes, dtype=float)
        edges = np.concatenate(([-np.inf], 0.5 * (nodes[1:] + nodes[:-1]), [np.inf]))
        mu = self.drift(nodes)
        sd = self.diffusion_std(nodes)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (edges[:, None] - mu[None, :]) / sd[None, :]
        point = sd == 0.0
        if np.any(point):
            z[:, point] = np.where(edges[:, None] >= mu[None, point], np.inf, -np.inf)
        z[0, :] = -np.inf
        z[-1, :] = np.inf
        cdf = special.ndtr(z)
        mass = np.diff(cdf, axis=0)
        return mass / trapezoid_weights(nodes)[:, None]

    def kalman_coefficients(self):
        """Linearised model: random walk with the diffusion at s = 0."""
        return 1.0, self.N * self.c**2, self.N * self.c, float(self.N), 0.0, self.prior_variance


class Link(NamedTuple):
    """Invertible observation link b(x) with the derivatives the filter needs."""

    fn: Callable
    deriv: Callable
    second: Callable
    inverse: Callable
    name: str


def exp_link():
    return Link(np.exp, np.exp, np.exp, np.log, "exp")


def identity_link():
    return Link(
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda y: np.asarray(y, dtype=float),
        "identity",
    )


@dataclass(frozen=True)
class ChiSquaredModel:
    """Multiplicative observation b(x_k) = s_k eta_k with eta ~ chi^2(t), s > 0.

    No hidden dynamics are attached; only the observation side is modelled.
    """

    t: float
    link: Link = field(default_factory=exp_link)

    model_id = "chi2"

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"degrees of freedom must be > 0, got t={self.t}")
        probe = np.linspace(0.1, 5.0, 50)
        if np.max(np.abs(self.link.inverse(self.link.fn(probe)) - probe)) > 1e-9:
            raise ValueError(f"link {self.link.name!r} is not invertible on the probe grid")

    def params(self):
        return {"kind": self.model_id, "t": self.t, "link": self.link.name}

    def observation_density(self, x, s):
        """Change of variables from the chi-squared noise density; 0 off-domain."""
        _finite(x, s)
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            y = self.link.fn(x)
            ok = (s > 0) & (y > 0)
            val = stats.chi2.pdf(np.where(ok, y / np.where(s > 0, s, 1.0), 1.0), self.t)
            val = val * np.abs(self.link.deriv(x)) / np.where(s > 0, s, 1.0)
        return np.where(ok, val, 0.0)

    def transition_density(self, s_next, s_prev):
        raise NotImplementedError("the chi-squared model carries no hidden dynamics")

    def decomposition(self):
        t, link = self.t, self.link
        norm = 2.0 ** (t / 2) * special.gamma(t / 2)

        def h(x):
            b = link.fn(x)
            with np.errstate(invalid="ignore"):
                return np.where(b > 0, np.abs(b) ** (t / 2 - 1) * np.abs(link.deriv(x)), 0.0)

        return ExpFamilyDecomposition(
            C_tilde=lambda s: np.asarray(s, dtype=float) ** (-t / 2) / norm,
            h=h,
            T=lambda x: link.fn(x) / 2.0,
            Q=lambda s: -1.0 / np.asarray(s, dtype=float),
            T_prime=lambda x: link.deriv(x) / 2.0,
            h_log_prime=lambda x: (t / 2 - 1) * link.deriv(x) / link.fn(x) + link.second(x) / link.deriv(x),
            Q_inverse=lambda q: -1.0 / np.asarray(q, dtype=float),
        )

    def sample_observation(self, s, rng):
        s = np.asarray(s, dtype=float)
        return self.link.inverse(s * rng.chisquare(self.t, size=s.shape))


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    hidden: np.ndarray
    observed: np.ndarray
    seed: int | None
    model_id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=float)
        self.observed = np.asarray(self.observed, dtype=float)
        if self.hidden.shape != self.observed.shape or self.hidden.ndim != 1:
            raise ValueError("hidden and observed must be 1-D sequences of equal length")
        if not (np.all(np.isfinite(self.hidden)) and np.all(np.isfinite(self.observed))):
            raise ValueError("trajectory entries must be finite")

    def __len__(self):
        return self.hidden.shape[0]


def simulate_linear(model, T, rng, s0=None):
    """Draw s0 ~ N(0, b^2/(1-a^2)) (unless given), then T steps of the pair.

    Draw order: s0, xi_1..xi_T, eta_1..eta_T.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if s0 is None:
        s0 = rng.normal(0.0, math.sqrt(model.prior_variance))
    xi = rng.standard_normal(T)
    eta = rng.standard_normal(T)
    hidden = np.empty(T)
    s = float(s0)
    for k in range(T):
        s = model.a * s + model.b * xi[k]
        hidden[k] = s
    observed = model.A * hidden + model.B * eta
    return Trajectory(hidden, observed, None, model.model_id, {"params": model.params(), "s0": float(s0)})


def simulate_qubit_chain(model, T, s0, rng, coupled_noise=False):
    """Euler-form block chain with clamping to [-1 + eps, 1 - eps].

    ``coupled_noise=True`` drives the state update with the previous step's
    observation noise (the literal x_{k-1}-driven form); by default the
    transition and observation noises are independent, which is the
    hidden-Markov reading the posterior recursion assumes.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if s0 is None:
        s0 = model.sample_s0(rng)
    if not abs(s0) < 1.0:
        raise InvalidStateError(f"|s0| must be < 1, got {s0}")
    sd = math.sqrt(model.N)
    omega_trans = rng.normal(0.0, sd, T)
    omega_obs = rng.normal(0.0, sd, T)
    hidden, observed, clamps = _kernels.euler_qubit_chain(
        float(s0), float(model.c), float(model.N), float(model.clamp_eps), omega_trans, omega_obs, bool(coupled_noise)
    )
    meta = {"params": model.params(), "s0": float(s0), "clamp_count": int(clamps), "coupled_noise": bool(coupled_noise)}
    return Trajectory(hidden, observed, None, model.model_id, meta)


def mobius_step(s, c, outcome):
    """Exact post-measurement update s -> (s + c)/(1 + c s) for outcome +1, else (s - c)/(1 - c s)."""
    return (s + outcome * c) / (1.0 + outcome * c * s)


def simulate_microstep_chain(model, blocks, s0, rng, engine="kernel"):
    """Exact chain: N single measurements per block, Moebius update after each.

    ``hidden[k]`` is the state at the start of block k and ``observed[k]`` the
    block's net outcome x_+ - x_-. ``engine="quantum"`` runs the same chain
    through the density-matrix simulator (system Bloch vector (0, s, 0),
    ancilla (0, 0, c), coupling angle pi/4, sigma_x readout); both engines
    consume one uniform per measurement and agree outcome for outcome.
    """
    if not abs(s0) < 1.0:
        raise InvalidStateError(f"|s0| must be < 1, got {s0}")
    N = int(model.N)
    if engine == "kernel":
        u = rng.random(blocks * N)
        hidden, observed = _kernels.mobius_chain(float(s0), float(model.c), N, u)
    elif engine == "quantum":
        chain = WeakMeasurementChain(
            bloch_to_density([0.0, s0, 0.0]),
            bloch_to_density([0.0, 0.0, model.c]),
            coupling_unitary(1.0, math.pi / 4),
            observable="x",
        )
        hidden = np.empty(blocks)
        observed = np.empty(blocks)
        for k in range(blocks):
            hidden[k] = density_to_bloch(chain.rho_system)[1]
            observed[k] = chain.run(N, rng).sum()
    else:
        raise ValueError(f"unknown engine {engine!r}")
    meta = {"params": model.params(), "s0": float(s0), "engine": engine, "clamp_count": 0}
    return Trajectory(hidden, observed, None, model.model_id + "-microstep", meta)


def observation_density(model, x, s):
    return model.observation_density(x, s)


def transition_density(model, s_next, s_prev):
    return model.transition_density(s_next, s_prev)


def model_from_params(params):
    """Inverse of ``model.params()`` for the simulated model kinds."""
    params = dict(params)
    kind = params.pop("kind")
    if kind == "linear":
        return LinearGaussianModel(**{k: float(params[k]) for k in ("a", "b", "A", "B")})
    if kind == "qubit":
        return QubitChainModel(float(params["c"]), int(params["N"]), float(params.get("clamp_eps", 1e-6)))
    raise ValueError(f"unknown model kind {kind!r}")


def save_trajectory(traj, csv_path):
    """Write ``step,hidden,observed`` rows plus a ``.json`` metadata sidecar."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "hidden", "observed"])
        for k, (s, x) in enumerate(zip(traj.hidden, traj.observed), start=1):
            w.writerow([k, f"{s:.17g}", f"{x:.17g}"])
    meta = {"model_id": traj.model_id, "seed": traj.seed, "length": len(traj), **traj.meta}
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path


def load_trajectory(csv_path):
    csv_path = Path(csv_path)
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    seed = meta.pop("seed", None)
    model_id = meta.pop("model_id")
    meta.pop("length", None)
    return Trajectory(data[:, 1], data[:, 2], seed, model_id, meta)
