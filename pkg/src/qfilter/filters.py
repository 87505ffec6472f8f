"""Estimators of the hidden sequence and the empirical risk.

* ``kalman_filter``: scalar predict/update recursion.
* ``grid_posterior_init`` / ``grid_posterior_step``: the exact posterior
  recursion on a fixed grid (needs the prior and transition law).
* ``optimal_filter_estimate``: solves the filtering equation
  E(Q(s_k) | x_1^k) T'(x_k) = d/dx_k ln(f(x_k | x_1^{k-1}) / h(x_k))
  pointwise, given only an estimate of the predictive density.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import (
    DensitySaturationError,
    NoninformativePointError,
    QFilterError,
    ZeroNormalizerError,
)
from .kde import DENSITY_FLOOR, KernelSpec, PredictiveEstimate, sequential_log_derivatives
from .models import trapezoid_weights

NONINFORMATIVE = 1e-12

# per-step status codes shared by FilterReport
OK, WARMUP, SATURATED, NO_NEIGHBOR, NONINFORMATIVE_POINT = 0, 1, 2, 3, 4
STATUS_NAMES = {OK: "ok", WARMUP: "warmup", SATURATED: "saturated", NO_NEIGHBOR: "no-neighbor", NONINFORMATIVE_POINT: "noninformative"}


# --------------------------------------------------------------------------
# Kalman


class KalmanState(NamedTuple):
    mean: float
    variance: float


@dataclass(frozen=True)
class KalmanResult:
    means: np.ndarray
    variances: np.ndarray
    pred_means: np.ndarray  # state prediction a * m_{k-1}
    pred_variances: np.ndarray
    A: float
    obs_variance: float

    def states(self):
        return [KalmanState(float(m), float(v)) for m, v in zip(self.means, self.variances)]

    def predictive(self, k, x):
        """Exact Gaussian predictive density of the k-th observation (0-based) at x."""
        mu = self.A * self.pred_means[k]
        S = self.A**2 * self.pred_variances[k] + self.obs_variance
        value = math.exp(-0.5 * (x - mu) ** 2 / S) / math.sqrt(2.0 * math.pi * S)
        return PredictiveEstimate(value, -(x - mu) / S * value, -(x - mu) / S, value < DENSITY_FLOOR)

    def log_derivatives(self, observed):
        mu = self.A * self.pred_means
        S = self.A**2 * self.pred_variances + self.obs_variance
        return -(np.asarray(observed, dtype=float) - mu) / S


def kalman_filter(model, observed, m0=None, P0=None):
    """Posterior means/variances of s_k given x_1..x_k.

    Starts from the model's prior on s_0 (mean 0, variance b^2/(1-a^2) for
    the linear model) and runs predict -> update for every observation.
    """
    a, q, A, r, m_init, P_init = model.kalman_coefficients()
    obs = np.ascontiguousarray(observed, dtype=float)
    m0 = m_init if m0 is None else m0
    P0 = P_init if P0 is None else P0
    means, variances, pm, pv = _kernels.kalman_scalar(obs, float(a), float(q), float(A), float(r), float(m0), float(P0))
    return KalmanResult(means, variances, pm, pv, float(A), float(r))


def steady_state_variance(a, q, A, r):
    """Fixed point of the posterior-variance Riccati map, in closed form.

    With predicted variance p = a^2 P + q and P = p r / (A^2 p + r):
    A^2 p^2 + (r - a^2 r - q A^2) p - q r = 0; take the positive root.
    """
    qa, qb, qc = A * A, r - a * a * r - q * A * A, -q * r
    p = (-qb + math.sqrt(qb * qb - 4 * qa * qc)) / (2 * qa)
    return p * r / (A * A * p + r)


# --------------------------------------------------------------------------
# grid posterior recursion


@dataclass(frozen=True)
class GridPosterior:
    nodes: np.ndarray
    weights: np.ndarray
    normalizer: float = 1.0  # predictive density of the observation just absorbed

    def integral(self):
        return float(trapezoid_weights(self.nodes) @ self.weights)


def _on_grid(f, nodes):
    if callable(f):
        return np.asarray(f(nodes), dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape != nodes.shape:
        raise ValueError(f"expected values on {nodes.shape[0]} nodes, got shape {f.shape}")
    return f


def _check_nodes(nodes):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.shape[0] < 2 or not np.all(np.diff(nodes) > 0):
        raise ValueError("grid nodes must be a strictly increasing sequence")
    return nodes


def _absorb(nodes, predicted, likelihood):
    q = trapezoid_weights(nodes)
    unnorm = likelihood * predicted
    z = float(q @ unnorm)
    if not (z > 0.0 and math.isfinite(z)):
        raise ZeroNormalizerError(f"posterior normalizer is {z!r}")
    return GridPosterior(nodes, unnorm / z, z)


def grid_posterior_init(prior_density, likelihood, nodes):
    """w_1(s) = f(x_1|s) p(s) / integral, on ``nodes``.

    ``prior_density`` and ``likelihood`` are callables of s or arrays of
    their values at the nodes.
    """
    nodes = _check_nodes(nodes)
    return _absorb(nodes, _on_grid(prior_density, nodes), _on_grid(likelihood, nodes))


def transition_matrix(transition, nodes):
    """K[i, j] = p(nodes[i] | nodes[j]) from a callable, or pass a matrix through."""
    if callable(transition):
        return np.asarray(transition(nodes[:, None], nodes[None, :]), dtype=float)
    K = np.asarray(transition, dtype=float)
    if K.shape != (nodes.shape[0], nodes.shape[0]):
        raise ValueError(f"transition matrix must be {nodes.shape[0]}x{nodes.shape[0]}")
    return K


def propagate(post, transition):
    """Chapman-Kolmogorov step: density of s_k given x_1..x_{k-1} on the grid."""
    K = transition_matrix(transition, post.nodes)
    return K @ (trapezoid_weights(post.nodes) * post.weights)


def grid_posterior_step(post_prev, transition, likelihood):
    """One step of the posterior recursion; ``normalizer`` is f(x_k | x_1^{k-1})."""
    predicted = propagate(post_prev, transition)
    return _absorb(post_prev.nodes, predicted, _on_grid(likelihood, post_prev.nodes))


def posterior_mean(post, transform=None):
    """Trapezoid integral of transform(s) w(s); identity transform by default."""
    vals = post.nodes if transform is None else np.asarray(transform(post.nodes), dtype=float)
    return float(trapezoid_weights(post.nodes) @ (vals * post.weights))


@dataclass(frozen=True)
class GridResult:
    means: np.ndarray
    log_normalizers: np.ndarray
    nodes: np.ndarray
    # predicted densities (before absorbing x_k); kept only on request
    predicted: np.ndarray | None = None


def grid_filter(model, observed, nodes=None, n_nodes=2001, keep_predicted=False):
    """Run the posterior recursion over a whole sequence.

    ``observed`` may be 1-D or a (batch, T) array of independent sequences,
    which are filtered together (one matrix product per step). The prior on
    s_0 is pushed through one transition before absorbing x_1.
    """
    obs = np.asarray(observed, dtype=float)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    nodes = _check_nodes(model.grid(n_nodes) if nodes is None else nodes)
    q = trapezoid_weights(nodes)
    K = model.transition_matrix(nodes)
    KT = np.ascontiguousarray(K.T)
    n_batch, T = obs.shape
    prior = model.prior_density(nodes)
    prior = prior / (q @ prior)
    pred = np.tile(prior * q, (n_batch, 1)) @ KT
    means = np.empty((n_batch, T))
    log_z = np.empty((n_batch, T))
    kept = np.empty((n_batch, T, nodes.shape[0])) if keep_predicted else None
    for k in range(T):
        if keep_predicted:
            kept[:, k] = pred
        lik = model.observation_density(obs[:, k, None], nodes[None, :])
        unnorm = lik * pred
        z = unnorm @ q
        if not np.all((z > 0.0) & np.isfinite(z)):
            bad = int(np.flatnonzero(~((z > 0.0) & np.isfinite(z)))[0])
            raise ZeroNormalizerError(f"posterior normalizer vanished at step {k + 1} (sequence {bad})")
        w = unnorm / z[:, None]
        means[:, k] = (w * nodes) @ q
        log_z[:, k] = np.log(z)
        pred = (w * q) @ KT
    if single:
        return GridResult(means[0], log_z[0], nodes, None if kept is None else kept[0])
    return GridResult(means, log_z, nodes, kept)


def grid_predictive(model, nodes, predicted, x, dx):
    """Predictive density at x from a grid prediction, derivative by central difference."""
    q = trapezoid_weights(nodes)

    def z(xx):
        return float(q @ (model.observation_density(xx, nodes) * predicted))

    value = z(x)
    deriv = (z(x + dx) - z(x - dx)) / (2.0 * dx)
    return PredictiveEstimate(value, deriv, deriv / max(value, DENSITY_FLOOR), value < DENSITY_FLOOR)


# --------------------------------------------------------------------------
# filtering equation


def optimal_filter_estimate(decomp, x, predictive):
    """E(Q(s_k) | x_1^k) = [ (ln f)'(x_k) - h'(x_k)/h(x_k) ] / T'(x_k).

    For a Gaussian observation density Q is the identity and this reduces
    to (B^2/A) f'/f + x/A.

    Raises
    ------
    NoninformativePointError
        |T'(x_k)| <= 1e-12.
    DensitySaturationError
        The predictive density estimate is at its floor.
    """
    tp = float(decomp.T_prime(x))
    if not abs(tp) > NONINFORMATIVE:
        raise NoninformativePointError(f"T'({x!r}) = {tp!r}")
    if predictive.saturated:
        raise DensitySaturationError(f"predictive density {predictive.value!r} is below the floor")
    return (predictive.log_derivative - float(decomp.h_log_prime(x))) / tp


def point_estimate(decomp, q_estimate):
    """Plug-in Q^{-1}(E(Q(s)|x)). Not a posterior mean unless Q is affine."""
    if decomp.Q_inverse is None:
        raise ValueError("decomposition has no Q inverse")
    return decomp.Q_inverse(q_estimate)


def optimal_filter_path(decomp, observed, log_derivatives, status=None):
    """Vectorised ``optimal_filter_estimate`` over a sequence.

    Steps with a non-zero incoming ``status`` or an uninformative T' come
    back as NaN with their status code set.
    """
    x = np.asarray(observed, dtype=float)
    status = np.zeros(x.shape[0], dtype=np.int8) if status is None else np.array(status, dtype=np.int8)
    tp = np.asarray(decomp.T_prime(x), dtype=float)
    flat = ~(np.abs(tp) > NONINFORMATIVE)
    status[flat & (status == OK)] = NONINFORMATIVE_POINT
    with np.errstate(divide="ignore", invalid="ignore"):
        est = (np.asarray(log_derivatives, dtype=float) - decomp.h_log_prime(x)) / tp
    est[status != OK] = np.nan
    return est, status


# --------------------------------------------------------------------------
# risk and orchestration


def empirical_risk(estimates, hidden):
    """Mean squared error between estimates and the hidden sequence."""
    e = np.asarray(estimates, dtype=float)
    s = np.asarray(hidden, dtype=float)
    if e.shape != s.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {s.shape}")
    return float(np.mean((s - e) ** 2))


FILTER_KINDS = ("kalman", "grid", "optimal-eq")
OPTIMAL_MODES = ("kde", "grid", "exact")


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "kalman"
    mode: str = "kde"  # predictive source for optimal-eq
    n_nodes: int = 2001
    kernel: KernelSpec = field(default_factory=KernelSpec)
    warmup: int | None = None

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter {self.kind!r}; expected one of {FILTER_KINDS}")
        if self.mode not in OPTIMAL_MODES:
            raise ValueError(f"unknown optimal-eq mode {self.mode!r}; expected one of {OPTIMAL_MODES}")
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be >= 3")

    @property
    def filter_id(self):
        return self.kind if self.kind != "optimal-eq" else f"optimal-eq:{self.mode}"

    def as_dict(self):
        d = asdict(self)
        d["filter_id"] = self.filter_id
        return d


@dataclass
class FilterReport:
    filter_id: str
    estimates: np.ndarray
    squared_errors: np.ndarray
    status: np.ndarray
    empirical_risk: float
    saturation_count: int = 0
    excluded_count: int = 0

    @classmethod
    def from_estimates(cls, filter_id, estimates, hidden, status=None):
        est = np.asarray(estimates, dtype=float)
        hidden = np.asarray(hidden, dtype=float)
        status = np.zeros(est.shape[0], dtype=np.int8) if status is None else np.asarray(status, dtype=np.int8)
        sq = (hidden - est) ** 2
        sq[status != OK] = np.nan
        valid = status == OK
        risk = float(np.mean(sq[valid])) if np.any(valid) else float("nan")
        return cls(
            filter_id,
            est,
            sq,
            status,
            risk,
            saturation_count=int(np.sum(status == SATURATED)),
            excluded_count=int(np.sum(~valid)),
        )


def _optimal_eq(model, observed, config, kalman_result=None):
    decomp = model.decomposition()
    if config.mode == "kde":
        logd, _, _, status = sequential_log_derivatives(observed, config.kernel, config.warmup)
    elif config.mode == "exact":
        kr = kalman_result or kalman_filter(model, observed)
        logd, status = kr.log_derivatives(observed), None
    else:
        res = grid_filter(model, observed, n_nodes=config.n_nodes, keep_predicted=True)
        dx = 1e-4 * float(np.std(observed))
        logd = np.empty(len(observed))
        status = np.zeros(len(observed), dtype=np.int8)
        for k, xk in enumerate(observed):
            p = grid_predictive(model, res.nodes, res.predicted[k], float(xk), dx)
            logd[k] = p.log_derivative
            if p.saturated:
                status[k] = SATURATED
    return optimal_filter_path(decomp, observed, logd, status)


def run_filter_pipeline(model, trajectory, config=FilterConfig()):
    """Run one filter over a trajectory and score it against the hidden path.

    Steps the filter could not estimate (warm-up, density floor,
    uninformative points) are excluded from the risk and counted.
    """
    obs = trajectory.observed
    if config.kind == "kalman":
        est, status = kalman_filter(model, obs).means, None
    elif config.kind == "grid":
        est, status = grid_filter(model, obs, n_nodes=config.n_nodes).means, None
    else:
        est, status = _optimal_eq(model, obs, config)
    return FilterReport.from_estimates(config.filter_id, est, trajectory.hidden, status)


def run_filter_batch(model, trajectories, config):
    """``run_filter_pipeline`` over many trajectories; the grid filter is batched."""
    if config.kind == "grid" and trajectories:
        lengths = {len(t) for t in trajectories}
        if len(lengths) == 1:
            res = grid_filter(model, np.stack([t.observed for t in trajectories]), n_nodes=config.n_nodes)
            return [FilterReport.from_estimates(config.filter_id, m, t.hidden) for m, t in zip(res.means, trajectories)]
    return [run_filter_pipeline(model, t, config) for t in trajectories]


def save_filter_report(report, hidden, csv_path, config=None):
    """CSV (step, estimate, hidden, squared_error, status) + JSON summary sidecar."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "estimate", "hidden", "squared_error", "status"])
        for k, (e, s, sq, st) in enumerate(zip(report.estimates, hidden, report.squared_errors, report.status), start=1):
            w.writerow([k, f"{e:.17g}", f"{s:.17g}", f"{sq:.17g}", STATUS_NAMES[int(st)]])
    summary = {
        "filter_id": report.filter_id,
        "risk": report.empirical_risk,
        "saturation_count": report.saturation_count,
        "excluded_count": report.excluded_count,
        "steps": int(len(report.estimates)),
        "config": None if config is None else config.as_dict(),
    }
    csv_path.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return csv_path


__all__ = [
    "FilterConfig",
    "FilterReport",
    "GridPosterior",
    "GridResult",
    "KalmanResult",
    "KalmanState",
    "QFilterError",
    "empirical_risk",
    "grid_filter",
    "grid_posterior_init",
    "grid_posterior_step",
    "grid_predictive",
    "kalman_filter",
    "optimal_filter_estimate",
    "optimal_filter_path",
    "point_estimate",
    "posterior_mean",
    "propagate",
    "run_filter_batch",
    "run_filter_pipeline",
    "save_filter_report",
    "steady_state_variance",
]
