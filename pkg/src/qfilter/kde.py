"""Kernel estimates of the one-step predictive density and its x-derivative.

The estimator conditions the next observation on the last ``m`` observed
values with Gaussian product kernels (Nadaraya-Watson form)::

    f(x | w) = sum_i K_h(x - x_i) prod_j K_g(w_j - x_{i-j}) / sum_i prod_j K_g(w_j - x_{i-j})

With ``m = 0`` this is an ordinary kernel density estimate. The
x-derivative is analytic, so the log-derivative needs no differencing.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InsufficientHistoryError, NoNeighborError

DENSITY_FLOOR = 1e-12
NO_NEIGHBOR = 1e-300


@dataclass(frozen=True)
class KernelSpec:
    kernel: str = "gaussian"
    bandwidth_rule: str = "silverman"
    fixed_h: float | None = None
    conditioning_lag: int = 1

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.bandwidth_rule not in ("silverman", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed" and not (self.fixed_h is not None and self.fixed_h > 0):
            raise ValueError("fixed bandwidth rule needs fixed_h > 0")
        if int(self.conditioning_lag) != self.conditioning_lag or self.conditioning_lag < 0:
            raise ValueError("conditioning_lag must be a non-negative integer")


@dataclass(frozen=True)
class PredictiveEstimate:
    value: float
    derivative: float
    log_derivative: float
    saturated: bool = False


def silverman_bandwidth(values):
    """1.06 * sample std * n^(-1/5)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return 1.06 * np.std(values, ddof=1) * values.size ** (-0.2)


def predictive_from_sums(num, dnum, den):
    """Turn kernel sums into a PredictiveEstimate, applying the density floor."""
    if not den >= NO_NEIGHBOR:
        raise NoNeighborError(f"conditioning weights sum to {den!r}")
    value = num / den
    deriv = dnum / den
    saturated = value < DENSITY_FLOOR
    return PredictiveEstimate(float(value), float(deriv), float(deriv / max(value, DENSITY_FLOOR)), bool(saturated))


@dataclass(frozen=True)
class PredictiveEstimator:
    """Fitted estimator; immutable, safe to share across threads."""

    targets: np.ndarray  # x_i
    conds: np.ndarray  # row i: (x_{i-1}, ..., x_{i-m})
    h: float
    spec: KernelSpec

    @property
    def lag(self):
        return self.conds.shape[1]

    def evaluate(self, x, window=()):
        """Predictive density at ``x`` given the last ``m`` observations.

        ``window[j-1]`` is the observation j steps back (most recent first).
        """
        window = np.asarray(window, dtype=float).reshape(-1)
        if window.shape[0] != self.lag:
            raise ValueError(f"window must have length {self.lag}, got {window.shape[0]}")
        num, dnum, den = _kernels.nw_sums(self.targets, self.conds, float(x), window, self.h, self.h)
        return predictive_from_sums(num, dnum, den)


def lagged_pairs(history, m):
    history = np.asarray(history, dtype=float)
    n = history.shape[0]
    targets = history[m:]
    conds = np.empty((n - m, m))
    for j in range(1, m + 1):
        conds[:, j - 1] = history[m - j : n - j]
    return targets, conds


def fit_predictive(history, spec=KernelSpec()):
    """Build the lag-m estimator from an observed sequence.

    Needs at least one (target, window) pair, and at least two targets
    when the bandwidth comes from Silverman's rule.
    """
    history = np.asarray(history, dtype=float).reshape(-1)
    m = int(spec.conditioning_lag)
    if not np.all(np.isfinite(history)):
        raise ValueError("history must be finite")
    need = m + (2 if spec.bandwidth_rule == "silverman" else 1)
    if history.shape[0] < need:
        raise InsufficientHistoryError(f"need at least {need} observations for lag {m}, got {history.shape[0]}")
    targets, conds = lagged_pairs(history, m)
    h = spec.fixed_h if spec.bandwidth_rule == "fixed" else silverman_bandwidth(targets)
    if not h > 0:
        raise InsufficientHistoryError("history has zero spread; Silverman bandwidth is 0")
    return PredictiveEstimator(targets, conds, float(h), spec)


def evaluate(estimator, x, window=()):
    return estimator.evaluate(x, window)


def sequential_log_derivatives(observed, spec=KernelSpec(), warmup=None):
    """Predictive log-derivative at each x_k from x_1..x_{k-1} only.

    Returns ``(log_derivative, value, bandwidth, status)`` arrays; ``status``
    is 0 for a usable step, 1 before the warm-up, 2 where the density hit
    its floor and 3 where the conditioning window had no neighbours.
    Steps flagged non-zero carry NaN log-derivatives.
    """
    x = np.asarray(observed, dtype=float)
    m = int(spec.conditioning_lag)
    min_start = m + (2 if spec.bandwidth_rule == "silverman" else 1)
    start = min_start if warmup is None else max(int(warmup), min_start)
    fixed_h = float(spec.fixed_h) if spec.bandwidth_rule == "fixed" else 0.0
    num, dnum, den, bw = _kernels.nw_sequential(x, m, start, fixed_h)
    status = np.ones(x.shape[0], dtype=np.int8)
    status[start:] = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        value = num / den
        logd = dnum / num
    no_nb = ~(den >= NO_NEIGHBOR)
    sat = ~no_nb & ~(value >= DENSITY_FLOOR)
    status[start:][sat[start:]] = 2
    status[start:][no_nb[start:]] = 3
    logd[status != 0] = np.nan
    return logd, value, bw, status


__all__ = [
    "DENSITY_FLOOR",
    "KernelSpec",
    "PredictiveEstimate",
    "PredictiveEstimator",
    "evaluate",
    "fit_predictive",
    "lagged_pairs",
    "predictive_from_sums",
    "sequential_log_derivatives",
    "silverman_bandwidth",
]
