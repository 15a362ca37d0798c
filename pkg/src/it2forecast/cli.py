"""Command-line entry point.

Exit codes: 0 success, 1 failed check, 2 configuration or usage error,
3 numeric abort during training.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from .data import DataError, SeriesSpec, add_noise, generate_mackey_glass, synthetic_microgrid, write_csv
from .gradients import TrainingDiverged, gradcheck
from .modelio import ModelFileError, load_model, save_model

EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3


def _guard(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from .evaluation import ConfigError

        try:
            return fn(*args, **kwargs)
        except TrainingDiverged as exc:
            click.echo(f"numeric abort: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ConfigError, ModelFileError, DataError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


def _config(path, seed=None, out=None):
    from .evaluation import ExperimentConfig

    cfg = ExperimentConfig.from_toml(path) if path else ExperimentConfig()
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if out is not None:
        changes["output_dir"] = str(out)
    return cfg.replace(**changes) if changes else cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log every learning episode.")
def main(verbose):
    """Interval type-2 fuzzy neural network forecaster."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command("gen-data")
@click.option("--mackey-glass", "kind", flag_value="mackey-glass", default=True, help="Chaotic delay series (default).")
@click.option("--microgrid", "kind", flag_value="microgrid", help="Synthetic hourly unmet power and price.")
@click.option("--tau", default=30.0, show_default=True)
@click.option("--x0", default=1.2, show_default=True)
@click.option("--len", "length", default=1500, show_default=True, help="Number of samples.")
@click.option("--start", default=31, show_default=True, help="First sampled time.")
@click.option("--days", default=366, show_default=True, help="Microgrid length in days.")
@click.option("--noise", default=0.0, show_default=True, help="Noise std as a fraction of the series std.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@_guard
def gen_data(kind, tau, x0, length, start, days, noise, seed, out):
    """Write a generated series as CSV."""
    if kind == "mackey-glass":
        try:
            spec = SeriesSpec(tau=tau, x0=x0, length=length, start=start)
        except ValueError as exc:
            raise click.UsageError(str(exc))
        t, x = generate_mackey_glass(spec)
        write_csv(out, [int(v) for v in t], {"value": add_noise(x, noise, seed)})
        n = len(t)
    else:
        table = synthetic_microgrid(days=days, seed=seed)
        cols = {k: add_noise(v, noise, seed) for k, v in table.columns.items()}
        write_csv(out, table.timestamps, cols)
        n = len(table)
    click.echo(f"wrote {n} rows to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment TOML file.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Output directory.")
@_guard
def train(config_path, seed, out):
    """Learn the rule base and save model.json plus learning_log.txt."""
    from .evaluation import make_dataset, train_model, write_log

    cfg = _config(config_path, seed, out)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(cfg)
    model, logs = train_model(ds, cfg)
    save_model(model, out_dir / "model.json")
    write_log(logs, out_dir / "learning_log.txt")
    click.echo(f"rules: {','.join(map(str, model.rule_counts))}; model written to {out_dir / 'model.json'}")


def _model_and_data(config_path, model_path):
    from .evaluation import make_dataset

    cfg = _config(config_path)
    model = load_model(model_path)
    if model.scheme != cfg.scheme or tuple(cfg.input_lags) != model.window.input_lags \
            or tuple(cfg.output_leads) != model.window.output_leads or bool(cfg.calendar) != model.window.calendar:
        from .evaluation import ConfigError

        raise ConfigError("model file and config disagree on scheme or window layout")
    return cfg, model, make_dataset(cfg, normalizer=model.value_normalizer)


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path))
@click.option("--mpe-epsilon", type=float, help="Floor for |actual| in MPE.")
@_guard
def eval_cmd(config_path, model_path, out, mpe_epsilon):
    """Per-step and averaged RMSE / MPE on train and test windows."""
    from .evaluation import evaluate, format_report, write_metrics

    cfg, model, ds = _model_and_data(config_path, model_path)
    report = evaluate(model, ds, mpe_epsilon if mpe_epsilon is not None else cfg.mpe_epsilon)
    out_dir = Path(out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(report, out_dir / "metrics.csv")
    click.echo(format_report(report))


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="test", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@_guard
def predict(config_path, model_path, split, out):
    """Write de-normalized multi-step forecasts for every window."""
    from .evaluation import write_predictions

    _, model, ds = _model_and_data(config_path, model_path)
    splits = ("train", "test") if split == "all" else (split,)
    write_predictions(model, ds, out, splits)
    click.echo(f"predictions written to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@_guard
def report(config_path, model_path, out):
    """Plot-ready predictions.csv and firing.csv (rule firing per test sample)."""
    from .evaluation import write_firing, write_predictions

    _, model, ds = _model_and_data(config_path, model_path)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(model, ds, out / "predictions.csv")
    write_firing(model, ds, out / "firing.csv")
    click.echo(f"report written to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path))
@_guard
def run(config_path, seed, out):
    """Train, evaluate and write every artifact."""
    from .evaluation import format_report, run_experiment

    cfg = _config(config_path, seed, out)
    rep = run_experiment(cfg)
    click.echo(format_report(rep))
    click.echo(f"artifacts in {cfg.output_dir} ({rep.wall_clock:.1f} s)")


@main.command("grad-check")
@click.option("--seed", default=0, show_default=True)
@click.option("--trials", default=50, show_default=True)
@click.option("--kernel/--python", default=False, help="Check the compiled gradient instead of the Python one.")
def grad_check(seed, trials, kernel):
    """Compare analytic gradients with central finite differences."""
    try:
        res = gradcheck(seed, trials, use_kernel=kernel)
    except RuntimeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    status = "PASS" if res.passed else "FAIL"
    click.echo(f"{status} trials={res.trials} checked={res.checked} failures={res.failures} "
               f"max_rel_error={res.max_rel_error:.3e}")
    sys.exit(0 if res.passed else EXIT_FAIL)


if __name__ == "__main__":  # pragma: no cover
    main()
