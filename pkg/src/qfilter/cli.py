"""Command-line entry point: ``qfilter simulate|filter|bench|qudit-demo``."""

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import emit_report, load_config, run_scenario, simulate_seed
from .errors import ConfigError, QFilterError
from .filters import FilterConfig, run_filter_pipeline, save_filter_report
from .kde import KernelSpec
from .models import load_trajectory, model_from_params, save_trajectory
from .quantum import bloch_to_density, kron, projector_set, random_bloch, swap_like_unitary
from .qudit import PARTITIONS, QuditChain, artificial_qubits, coarse_correlation, coarse_grain, load_qudit, relabel

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except QFilterError as exc:
            click.echo(f"filter error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def _overrides(seeds=None, filters=None, out=None, fmt=None, sets=()):
    items = list(sets)
    if seeds is not None:
        items.append(("seeds", seeds))
    if filters is not None:
        items.append(("filters", filters))
    if out is not None:
        items.append(("output.dir", out))
    if fmt is not None:
        items.append(("output.format", fmt))
    return items


config_opt = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML scenario file.")
set_opt = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override a config key.")


@click.group()
@click.version_option(__version__, prog_name="qfilter")
def cli():
    """Filtering toolkit for weak quantum-measurement chains."""


@cli.command()
@config_opt
@click.option("--seeds", help="Seed list, e.g. 1..200 or 1,4,9.")
@click.option("--filters", help="Comma-separated filters: kalman,grid,optimal-eq.")
@click.option("--out", help="Output directory.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), multiple=True, help="Output format(s).")
@set_opt
@_guarded
def bench(config_path, seeds, filters, out, fmt, sets):
    """Simulate every seed, run every filter, write risk tables."""
    config = load_config(config_path, _overrides(seeds, filters, out, ",".join(fmt) if fmt else None, sets))
    report = run_scenario(config)
    out_dir = config.output_dir or "bench-out"
    for path in emit_report(report, out_dir, config.formats):
        click.echo(f"wrote {path}")
    for fid, row in report.summary.items():
        click.echo(f"{fid:>16}  mean risk {row['mean_risk']:.6g}  se {row['std_error']:.3g}  failed {row['n_failed']}")
    for c in report.comparisons:
        click.echo(
            f"{c['filter']} vs kalman: diff {c['mean_difference']:.4g}, upper95 {c['bootstrap_upper_95']:.4g}, "
            f"effect {c['effect_size']:.3g}"
        )
    if report.failed:
        for r in report.rows:
            if r["error"]:
                click.echo(f"seed {r['seed']} {r['filter']}: {r['error']}", err=True)
        sys.exit(EXIT_RUNTIME)


@cli.command()
@config_opt
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Trajectory CSV path.")
@set_opt
@_guarded
def simulate(config_path, seed, out, sets):
    """Simulate one trajectory and write it as CSV plus JSON metadata."""
    config = load_config(config_path, [*sets, ("seeds", seed)], need_filters=False)
    model = model_from_params(config.model)
    traj = simulate_seed(config, model, seed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    click.echo(f"wrote {save_trajectory(traj, out)}")


@cli.command("filter")
@click.option("--trajectory", "traj_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--filters", default="kalman,grid", show_default=True)
@click.option("--mode", type=click.Choice(["kde", "grid", "exact"]), default="kde", show_default=True)
@click.option("--nodes", type=int, default=2001, show_default=True)
@click.option("--bandwidth", type=float, default=None, help="Fixed kernel bandwidth (default: Silverman).")
@click.option("--lag", type=int, default=1, show_default=True)
@click.option("--out", required=True, help="Output directory.")
@_guarded
def filter_cmd(traj_path, filters, mode, nodes, bandwidth, lag, out):
    """Run filters on a saved trajectory."""
    traj = load_trajectory(traj_path)
    try:
        model = model_from_params(traj.meta["params"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(traj_path, f"trajectory metadata has no usable model: {exc}") from None
    try:
        kernel = KernelSpec(bandwidth_rule="silverman" if bandwidth is None else "fixed", fixed_h=bandwidth, conditioning_lag=lag)
        configs = [FilterConfig(kind=k.strip(), mode=mode, n_nodes=nodes, kernel=kernel) for k in filters.split(",")]
    except ValueError as exc:
        raise ConfigError("filters", str(exc)) from None
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fc in configs:
        report = run_filter_pipeline(model, traj, fc)
        path = save_filter_report(report, traj.hidden, out_dir / f"{fc.filter_id.replace(':', '-')}.csv", fc)
        click.echo(f"{fc.filter_id:>16}  risk {report.empirical_risk:.6g}  excluded {report.excluded_count}  -> {path}")


@cli.command("qudit-demo")
@click.option("--state", "state_path", type=click.Path(exists=True, dir_okay=False), help="Qudit JSON state.")
@click.option("--phi", type=float, default=0.3, show_default=True)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--observable", type=click.Choice(["x", "z"]), default="z", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the summary as JSON.")
@_guarded
def qudit_demo(state_path, phi, steps, seed, observable, out):
    """Split a spin-3/2 state into artificial qubits and run a measurement chain."""
    rng = np.random.default_rng(seed)
    if state_path:
        q = load_qudit(state_path)
    else:
        q = relabel(kron(bloch_to_density(random_bloch(rng)), bloch_to_density(random_bloch(rng))))
    first, second = artificial_qubits(q)
    probs = np.array([v for v in q.populations().values()])
    chain = QuditChain(q, swap_like_unitary(phi), observable)
    p_next = chain.probabilities()
    outcomes = chain.run(steps, rng)
    summary = {
        "regime": chain.regime,
        "populations": {str(k): v for k, v in q.populations().items()},
        "artificial_system": [[str(complex(v)) for v in row] for row in first],
        "artificial_ancilla": [[str(complex(v)) for v in row] for row in second],
        "coarse": {name: list(coarse_grain(probs, name).probabilities) for name in PARTITIONS},
        "coarse_correlation": coarse_correlation(probs, "first", "second"),
        "first_step_probabilities": {str(p.label): float(v) for p, v in zip(projector_set(observable), p_next)},
        "outcomes": outcomes.tolist(),
    }
    text = json.dumps(summary, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


def main(argv=None):
    cli.main(args=argv, prog_name="qfilter")


if __name__ == "__main__":
    main()
