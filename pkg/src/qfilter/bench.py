"""Scenario configuration, multi-seed runs, and report emission."""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigError, QFilterError
from .filters import FILTER_KINDS, OPTIMAL_MODES, FilterConfig, run_filter_batch, run_filter_pipeline
from .kde import KernelSpec
from .models import model_from_params, simulate_linear, simulate_microstep_chain, simulate_qubit_chain

SCHEMA_VERSION = 1
CHUNK = 50  # seeds per batched task; fixed so results do not depend on pool size

MODEL_KEYS = {
    "linear": {"a": float, "b": float, "A": float, "B": float},
    "qubit": {"c": float, "N": int, "clamp_eps": float},
}


def parse_seeds(value, path="seeds"):
    """Accept ``"1..200"`` (inclusive), ``"1,2,5"``, an int, or a list of ints."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected seeds")
    if isinstance(value, int):
        seeds = [value]
    elif isinstance(value, str):
        text = value.strip()
        try:
            if ".." in text:
                lo, hi = (int(v) for v in text.split(".."))
                seeds = list(range(lo, hi + 1))
            else:
                seeds = [int(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(path, f"cannot parse seed list {value!r}") from None
    elif isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        seeds = list(value)
    else:
        raise ConfigError(path, f"cannot parse seed list {value!r}")
    if not seeds:
        raise ConfigError(path, "at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(path, "seeds must be unique")
    return tuple(seeds)


def _split_list(value, path):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return value
    raise ConfigError(path, f"expected a list of names, got {value!r}")


def flatten(tree, prefix=""):
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(text):
    """``key.path=value`` with the value read as a TOML literal (bare words as strings)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, value


@dataclass(frozen=True)
class ScenarioConfig:
    model: dict
    length: int
    seeds: tuple
    filters: tuple
    s0: float | None = None
    engine: str = "euler"
    coupled_noise: bool = False
    output_dir: str | None = None
    formats: tuple = ("csv", "json")
    bootstrap: int = 2000
    raw: dict = field(default_factory=dict, compare=False)

    def echo(self):
        return dict(sorted(self.raw.items()))


def load_config_file(path):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return flatten(tomli.load(fh))
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid config syntax: {exc}") from None


def _get(flat, key, kind, default=None, required=False):
    if key not in flat:
        if required:
            raise ConfigError(key, "missing required key")
        return default
    v = flat[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        raise ConfigError(key, f"expected {kind.__name__}, got {v!r}")
    return v


KNOWN_KEYS = {
    "model.kind", "model.a", "model.b", "model.A", "model.B", "model.c", "model.N", "model.clamp_eps",
    "trajectory.length", "trajectory.s0", "trajectory.engine", "trajectory.coupled_noise",
    "seeds", "filters", "optimal.mode", "grid.nodes",
    "kernel.bandwidth_rule", "kernel.fixed_h", "kernel.lag", "kernel.warmup",
    "output.dir", "output.format", "bootstrap.resamples",
}  # fmt: skip


def build_config(flat, need_filters=True):
    """Validate a flat ``{key.path: value}`` mapping into a ScenarioConfig."""
    unknown = sorted(set(flat) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    kind = _get(flat, "model.kind", str, required=True)
    if kind not in MODEL_KEYS:
        raise ConfigError("model.kind", f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KEYS)}")
    model = {"kind": kind}
    for key, typ in MODEL_KEYS[kind].items():
        v = _get(flat, f"model.{key}", typ, required=key != "clamp_eps")
        if v is not None:
            model[key] = v
    stray = [k for k in flat if k.startswith("model.") and k[6:] not in MODEL_KEYS[kind] and k != "model.kind"]
    if stray:
        raise ConfigError(stray[0], f"not a parameter of the {kind} model")
    try:
        model_from_params(model)
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None

    length = _get(flat, "trajectory.length", int, required=True)
    if length < 1:
        raise ConfigError("trajectory.length", "must be >= 1")
    s0 = flat.get("trajectory.s0", "uniform")
    if s0 == "uniform":
        s0 = None
    elif isinstance(s0, (int, float)) and not isinstance(s0, bool) and abs(s0) < 1:
        s0 = float(s0)
    else:
        raise ConfigError("trajectory.s0", "expected 'uniform' or a number in (-1, 1)")
    engine = _get(flat, "trajectory.engine", str, "euler")
    if engine not in ("euler", "microstep"):
        raise ConfigError("trajectory.engine", "expected 'euler' or 'microstep'")
    if engine == "microstep" and kind != "qubit":
        raise ConfigError("trajectory.engine", "microstep engine needs a qubit model")
    coupled = _get(flat, "trajectory.coupled_noise", bool, False)

    seeds = parse_seeds(flat["seeds"]) if "seeds" in flat else None
    if seeds is None:
        raise ConfigError("seeds", "at least one seed is required")

    names = _split_list(flat.get("filters", [] if need_filters else ["kalman"]), "filters")
    if not names:
        raise ConfigError("filters", "at least one filter is required")
    mode = _get(flat, "optimal.mode", str, "kde")
    if mode not in OPTIMAL_MODES:
        raise ConfigError("optimal.mode", f"expected one of {OPTIMAL_MODES}")
    n_nodes = _get(flat, "grid.nodes", int, 2001)
    if n_nodes < 3:
        raise ConfigError("grid.nodes", "must be >= 3")
    try:
        kernel = KernelSpec(
            bandwidth_rule=_get(flat, "kernel.bandwidth_rule", str, "silverman"),
            fixed_h=_get(flat, "kernel.fixed_h", float),
            conditioning_lag=_get(flat, "kernel.lag", int, 1),
        )
    except ValueError as exc:
        raise ConfigError("kernel", str(exc)) from None
    warmup = _get(flat, "kernel.warmup", int)
    filters = []
    for i, name in enumerate(names):
        if name not in FILTER_KINDS:
            raise ConfigError(f"filters[{i}]", f"unknown filter {name!r}; expected one of {FILTER_KINDS}")
        filters.append(FilterConfig(kind=name, mode=mode, n_nodes=n_nodes, kernel=kernel, warmup=warmup))

    formats = tuple(_split_list(flat.get("output.format", ["csv", "json"]), "output.format"))
    bad = [f for f in formats if f not in ("csv", "json")]
    if bad or not formats:
        raise ConfigError("output.format", "expected csv and/or json")
    n_boot = _get(flat, "bootstrap.resamples", int, 2000)
    if n_boot < 100:
        raise ConfigError("bootstrap.resamples", "must be >= 100")
    return ScenarioConfig(
        model=model,
        length=length,
        seeds=seeds,
        filters=tuple(filters),
        s0=s0,
        engine=engine,
        coupled_noise=coupled,
        output_dir=_get(flat, "output.dir", str),
        formats=formats,
        bootstrap=n_boot,
        raw=dict(flat),
    )


def load_config(path=None, overrides=(), need_filters=True):
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    flat = load_config_file(path) if path is not None else {}
    for item in overrides:
        key, value = item if isinstance(item, tuple) else parse_override(item)
        flat[key] = value
    return build_config(flat, need_filters)


# --------------------------------------------------------------------------
# running


def simulate_seed(config, model, seed):
    rng = np.random.default_rng(seed)
    if config.model["kind"] == "linear":
        traj = simulate_linear(model, config.length, rng)
    else:
        s0 = model.sample_s0(rng) if config.s0 is None else config.s0
        if config.engine == "microstep":
            traj = simulate_microstep_chain(model, config.length, s0, rng)
        else:
            traj = simulate_qubit_chain(model, config.length, s0, rng, coupled_noise=config.coupled_noise)
    traj.seed = int(seed)
    return traj


def _chunks(seq, size):
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def _run_chunk(model, filter_config, trajectories):
    try:
        return [(r, None) for r in run_filter_batch(model, trajectories, filter_config)]
    except QFilterError:
        pass
    out = []
    for t in trajectories:
        try:
            out.append((run_filter_pipeline(model, t, filter_config), None))
        except QFilterError as exc:
            out.append((None, f"{type(exc).__name__}: {exc}"))
    return out


def worker_count():
    env = os.environ.get("QFILTER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("QFILTER_THREADS", f"expected an integer, got {env!r}") from None
    return os.cpu_count() or 1


def paired_bootstrap(diff, n_boot, seed=0, level=0.95):
    """One-sided upper bound of mean(diff) by percentile bootstrap."""
    diff = np.asarray(diff, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    return float(np.quantile(means, level))


@dataclass
class BenchReport:
    rows: list
    summary: dict
    comparisons: list
    mse_by_step: dict
    config: dict
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    @property
    def failed(self):
        return any(r["error"] for r in self.rows)

    def mean_risk(self, filter_id):
        return self.summary[filter_id]["mean_risk"]

    def to_json(self):
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "config": self.config,
            "filters": self.summary,
            "comparisons": self.comparisons,
        }


def run_scenario(config, workers=None):
    """Simulate every seed, run every filter, aggregate risks.

    Deterministic for a given config: each seed owns its generator and the
    batching layout is fixed, independent of the worker count.
    """
    model = model_from_params(config.model)
    trajectories = [simulate_seed(config, model, s) for s in config.seeds]
    tasks = [(fc, chunk) for fc in config.filters for chunk in _chunks(trajectories, CHUNK)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: _run_chunk(model, *t), tasks))
    else:
        results = [_run_chunk(model, *t) for t in tasks]

    rows, per_filter, sq_by_filter = [], {}, {}
    for (fc, chunk), res in zip(tasks, results):
        for traj, (report, err) in zip(chunk, res):
            row = {
                "filter": fc.filter_id,
                "seed": traj.seed,
                "risk": float("nan") if report is None else report.empirical_risk,
                "saturation": 0 if report is None else report.saturation_count,
                "excluded": 0 if report is None else report.excluded_count,
                "clamp": int(traj.meta.get("clamp_count", 0)),
                "error": err or "",
            }
            rows.append(row)
            if report is not None:
                per_filter.setdefault(fc.filter_id, {})[traj.seed] = report.empirical_risk
                sq_by_filter.setdefault(fc.filter_id, []).append(report.squared_errors)

    summary = {}
    for fc in config.filters:
        risks = per_filter.get(fc.filter_id, {})
        vals = np.array([risks[s] for s in config.seeds if s in risks])
        summary[fc.filter_id] = {
            "mean_risk": float(np.mean(vals)) if vals.size else float("nan"),
            "std_error": float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan"),
            "n_seeds": int(vals.size),
            "n_failed": len(config.seeds) - int(vals.size),
            "saturation": int(sum(r["saturation"] for r in rows if r["filter"] == fc.filter_id)),
            "excluded": int(sum(r["excluded"] for r in rows if r["filter"] == fc.filter_id)),
            "clamp": int(sum(r["clamp"] for r in rows if r["filter"] == fc.filter_id)),
        }

    comparisons = []
    if "kalman" in per_filter:
        for fc in config.filters:
            if fc.filter_id == "kalman" or fc.filter_id not in per_filter:
                continue
            common = [s for s in config.seeds if s in per_filter["kalman"] and s in per_filter[fc.filter_id]]
            if len(common) < 2:
                continue
            d = np.array([per_filter[fc.filter_id][s] - per_filter["kalman"][s] for s in common])
            upper = paired_bootstrap(d, config.bootstrap)
            kal = float(np.mean([per_filter["kalman"][s] for s in common]))
            comparisons.append(
                {
                    "filter": fc.filter_id,
                    "reference": "kalman",
                    "n_seeds": len(common),
                    "mean_difference": float(d.mean()),
                    "bootstrap_upper_95": upper,
                    "not_worse_95": bool(upper <= 0.0),
                    "relative_change": float(d.mean() / kal) if kal else float("nan"),
                    "effect_size": float(d.mean() / d.std(ddof=1)) if d.std(ddof=1) > 0 else float("nan"),
                }
            )

    mse_by_step = {}
    for fid, arrs in sq_by_filter.items():
        with np.errstate(invalid="ignore"), _quiet():
            mse_by_step[fid] = np.nanmean(np.vstack(arrs), axis=0)

    echo = {"resolved": _resolved(config), "keys": config.echo()}
    return BenchReport(rows, summary, comparisons, mse_by_step, echo)


class _quiet:
    def __enter__(self):
        import warnings

        self._w = warnings.catch_warnings()
        self._w.__enter__()
        warnings.simplefilter("ignore", category=RuntimeWarning)

    def __exit__(self, *exc):
        return self._w.__exit__(*exc)


def _resolved(config):
    return {
        "model": config.model,
        "length": config.length,
        "seeds": [config.seeds[0], config.seeds[-1], len(config.seeds)],
        "filters": [fc.as_dict() for fc in config.filters],
        "s0": config.s0,
        "engine": config.engine,
        "coupled_noise": config.coupled_noise,
    }


# --------------------------------------------------------------------------
# output


def _num(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def emit_report(report, out_dir, formats=("csv", "json")):
    """Write ``bench.csv`` / ``mse_by_step.csv`` and/or ``bench.json`` into out_dir."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            path = out_dir / "bench.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["filter", "seed", "risk", "saturation", "excluded", "clamp", "error"])
                for r in report.rows:
                    w.writerow([_num(r[k]) for k in ("filter", "seed", "risk", "saturation", "excluded", "clamp", "error")])
            written.append(path)
            path = out_dir / "mse_by_step.csv"
            fids = list(report.mse_by_step)
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", *fids])
                n = len(next(iter(report.mse_by_step.values()))) if fids else 0
                for k in range(n):
                    w.writerow([k + 1, *(_num(float(report.mse_by_step[f][k])) for f in fids)])
            written.append(path)
        if "json" in formats:
            path = out_dir / "bench.json"
            path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True, allow_nan=True) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    return written
