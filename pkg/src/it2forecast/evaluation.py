"""Metrics, multi-step drivers, experiment configuration and the end-to-end runner."""

from __future__ import annotations

import csv
import dataclasses
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import backend
from .clustering import fcm
from .data import (SCHEMES, SeriesSpec, WindowedDataset, WindowSpec, add_noise, build_windows,
                   generate_mackey_glass, load_csv)
from .modelio import ForecastModel, save_model
from .network import firing_report
from .structure import LearnConfig, learn

ABLATIONS = ("no-layer4", "no-layer9", "crisp-consequent-per-rule")


class ConfigError(ValueError):
    """Invalid experiment configuration or a model/scheme mismatch."""


# --------------------------------------------------------------------------
# metrics


def rmse(pred, actual) -> float:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("rmse needs equal, non-empty shapes")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def mpe(pred, actual, epsilon: float | None = None) -> float:
    """Mean absolute percentage error, in percent.

    A zero actual value is an error unless ``epsilon`` is given, in which
    case denominators are floored at ``epsilon``.
    """
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ValueError("mpe needs equal, non-empty shapes")
    denom = np.abs(actual)
    if epsilon is None:
        zero = np.flatnonzero(denom.ravel() == 0)
        if zero.size:
            raise ValueError(f"mpe undefined: actual value at position {int(zero[0])} is zero; "
                             "set an epsilon floor (mpe_epsilon / --mpe-epsilon)")
    else:
        denom = np.maximum(denom, epsilon)
    return float(100.0 * np.mean(np.abs(pred - actual) / denom))


# --------------------------------------------------------------------------
# multi-step drivers


def predict_windows(model: ForecastModel, X, calendar_steps=None) -> np.ndarray:
    """Normalized K-step predictions for every row of ``X`` (N, n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = model.window
    if X.shape[1] != w.n_inputs:
        raise ConfigError(f"window has {X.shape[1]} inputs; the model expects {w.n_inputs}")
    if model.scheme == "MO":
        return backend.predict_batch(model.networks[0], X)
    if model.scheme == "PM":
        return np.column_stack([backend.predict_batch(p, X)[:, 0] for p in model.networks])
    # sliding window: feed each prediction back as the newest lag
    nc = w.n_calendar
    if nc and w.K > 1:
        if calendar_steps is None:
            raise ConfigError("sliding-window inference with calendar inputs needs calendar_steps")
        calendar_steps = np.asarray(calendar_steps, dtype=float).reshape(len(X), w.K, nc)
    p = model.networks[0]
    cur = X.copy()
    out = np.empty((len(X), w.K))
    for k in range(w.K):
        out[:, k] = backend.predict_batch(p, cur)[:, 0]
        if k + 1 < w.K:
            lags = np.concatenate([cur[:, nc + 1:], out[:, k:k + 1]], axis=1)
            cal = calendar_steps[:, k + 1] if nc else cur[:, :0]
            cur = np.concatenate([cal, lags], axis=1)
    return out


def predict_multistep(model: ForecastModel, x_window, calendar_steps=None) -> np.ndarray:
    """K-step forecast from one normalized input window."""
    cs = None if calendar_steps is None else np.asarray(calendar_steps, dtype=float)[None]
    return predict_windows(model, np.asarray(x_window, dtype=float)[None, :], cs)[0]


# --------------------------------------------------------------------------
# configuration


def _chaotic_lags():
    return list(range(-18, 0, 2))


@dataclass
class ExperimentConfig:
    """Every experiment knob; defaults reproduce the chaotic MO setting."""

    # data
    source: str = "mackey-glass"
    tau: float = 30.0
    x0: float = 1.2
    length: int = 1500
    start: int = 31
    h: float = 0.1
    csv_path: str | None = None
    column: str = "value"
    train_size: int = 1000
    noise: float = 0.0
    noise_seed: int = 0
    # windows
    input_lags: list = field(default_factory=_chaotic_lags)
    output_leads: list = field(default_factory=lambda: [0, 2, 4])
    calendar: bool = False
    calendar_offset: int = -1
    scheme: str = "MO"
    ablation: list = field(default_factory=list)
    # learning
    T_g: float = 0.0025
    T_r: float = 0.0025
    eta: float = 0.03
    n_clusters: int = 5
    upsilon: float = 0.1
    l_init: float = 0.1
    episode_max: int = 100
    grow_iterations: int = 1000
    finetune_iterations: int = 3000
    seed: int = 0
    workers: int = 1
    # evaluation / output
    mpe_epsilon: float | None = None
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        try:
            self.window_spec()
            self.learn_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.source not in ("mackey-glass", "csv"):
            raise ConfigError(f"source must be 'mackey-glass' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("source = 'csv' needs csv_path")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        bad = [a for a in self.ablation if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        d = dict(d)
        if base_dir is not None and d.get("csv_path") and not Path(d["csv_path"]).is_absolute():
            d["csv_path"] = str(Path(base_dir) / d["csv_path"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                d = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def window_spec(self) -> WindowSpec:
        return WindowSpec(tuple(self.input_lags), tuple(self.output_leads), self.scheme,
                          bool(self.calendar), int(self.calendar_offset))

    def learn_config(self) -> LearnConfig:
        return LearnConfig(
            T_g=self.T_g, T_r=self.T_r, eta=self.eta, n_clusters=self.n_clusters, upsilon=self.upsilon,
            l_init=self.l_init, episode_max=self.episode_max, grow_iterations=self.grow_iterations,
            finetune_iterations=self.finetune_iterations, seed=self.seed, workers=self.workers,
            use_co="no-layer4" not in self.ablation, use_link="no-layer9" not in self.ablation,
            shared_consequent="crisp-consequent-per-rule" in self.ablation,
        )


def load_series(config: ExperimentConfig):
    """Raw values, timestamps (or None) and the per-row train mask (or None)."""
    if config.source == "mackey-glass":
        spec = SeriesSpec(tau=config.tau, x0=config.x0, length=config.length, start=config.start, h=config.h)
        t, values = generate_mackey_glass(spec)
        stamps, mask = list(t), None
    else:
        table = load_csv(config.csv_path, [config.column])
        values, stamps, mask = table.columns[config.column], table.timestamps, table.train_mask
        if config.calendar and not table.hourly:
            raise ConfigError("calendar features need ISO-8601 timestamps in the CSV")
    values = add_noise(values, config.noise, config.noise_seed)
    if mask is None:
        mask = np.arange(len(values)) < config.train_size
    return values, stamps, mask


def make_dataset(config: ExperimentConfig, normalizer=None) -> WindowedDataset:
    values, stamps, mask = load_series(config)
    try:
        return build_windows(values, config.window_spec(), train_mask=mask,
                             timestamps=stamps, normalizer=normalizer)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# training and evaluation


def train_model(ds: WindowedDataset, config: ExperimentConfig, on_episode=None):
    """Learn the network(s) the scheme needs; returns (model, logs per network)."""
    lc = config.learn_config()
    X = ds.X[ds.train_idx]
    clusters = fcm(X, lc.n_clusters, lc.fcm_fuzzifier, lc.fcm_tol, lc.fcm_max_iter, seed=lc.seed)
    heads = list(range(ds.K)) if config.scheme == "PM" else [None]
    nets, logs = [], []
    for k in heads:
        result = learn(X, ds.training_targets(k), lc, clusters=clusters, on_episode=on_episode)
        nets.append(result.params)
        logs.append(result.log)
    meta = {"seed": config.seed, "rules": [p.M for p in nets], "ablation": list(config.ablation)}
    model = ForecastModel(nets, config.scheme, ds.spec, ds.value_normalizer, meta)
    return model, logs


@dataclass
class SplitMetrics:
    rmse: list
    mpe: list

    @property
    def rmse_avg(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def mpe_avg(self) -> float:
        return float(np.mean(self.mpe))


@dataclass
class EvalReport:
    test: SplitMetrics
    train: SplitMetrics
    rules: list
    log_path: str | None = None
    wall_clock: float = 0.0
    leads: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return max(self.rules)

    @property
    def rmse_avg(self) -> float:
        return self.test.rmse_avg

    @property
    def mpe_avg(self) -> float:
        return self.test.mpe_avg

    def rows(self):
        for split, m in (("train", self.train), ("test", self.test)):
            for k, lead in enumerate(self.leads):
                yield [split, f"step{k + 1}", lead, m.rmse[k], m.mpe[k]]
            yield [split, "avg", "", m.rmse_avg, m.mpe_avg]


def split_predictions(model: ForecastModel, ds: WindowedDataset, which: str):
    idx = ds.train_idx if which == "train" else ds.test_idx
    cs = None if ds.calendar_steps is None else ds.calendar_steps[idx]
    pred = ds.denormalize(predict_windows(model, ds.X[idx], cs))
    return idx, pred, ds.Y_raw[idx]


def evaluate(model: ForecastModel, ds: WindowedDataset, mpe_epsilon=None) -> EvalReport:
    parts = {}
    for which in ("train", "test"):
        idx, pred, actual = split_predictions(model, ds, which)
        if len(idx) == 0:
            raise ConfigError(f"the {which} split has no complete windows")
        parts[which] = SplitMetrics(
            [rmse(pred[:, k], actual[:, k]) for k in range(ds.K)],
            [mpe(pred[:, k], actual[:, k], mpe_epsilon) for k in range(ds.K)],
        )
    return EvalReport(parts["test"], parts["train"], model.rule_counts, leads=list(ds.spec.output_leads))


# --------------------------------------------------------------------------
# artifacts


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if hasattr(v, "isoformat"):
        return v.isoformat(timespec="minutes")
    return str(v)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_metrics(report: EvalReport, path) -> None:
    _write_rows(path, ["split", "step", "lead", "rmse", "mpe"], report.rows())


def write_predictions(model: ForecastModel, ds: WindowedDataset, path, splits=("train", "test")) -> None:
    """Long-format (time, actual, predicted) rows per split and step."""
    def rows():
        for which in splits:
            idx, pred, actual = split_predictions(model, ds, which)
            for r, i in enumerate(idx):
                for k, lead in enumerate(ds.spec.output_leads):
                    yield [which, ds.time_of(int(ds.origin[i]) + lead), k + 1, lead, actual[r, k], pred[r, k]]
    _write_rows(path, ["split", "time", "step", "lead", "actual", "predicted"], rows())


def write_firing(model: ForecastModel, ds: WindowedDataset, path, which: str = "test") -> None:
    """Per-sample rule firing intervals F^i and per-output F^{i,k}."""
    idx = ds.train_idx if which == "train" else ds.test_idx
    K = max(p.K for p in model.networks)
    header = ["split", "sample", "origin", "network", "rule", "F_lower", "F_upper"]
    for k in range(K):
        header += [f"F{k + 1}_lower", f"F{k + 1}_upper"]

    def rows():
        for s, i in enumerate(idx):
            for net_i, p in enumerate(model.networks):
                rule_f, grid = firing_report(ds.X[i], p)
                for r in range(p.M):
                    row = [which, s, ds.time_of(int(ds.origin[i])), net_i, r + 1, rule_f[r].lower, rule_f[r].upper]
                    for k in range(K):
                        row += [grid[r][k].lower, grid[r][k].upper] if k < p.K else ["", ""]
                    yield row
    _write_rows(path, header, rows())


def write_log(logs, path) -> None:
    with Path(path).open("w") as fh:
        for net_i, entries in enumerate(logs):
            for e in entries:
                fh.write(f"network={net_i} {e.line()}\n")


def run_experiment(config: ExperimentConfig, out_dir=None, on_episode=None) -> EvalReport:
    """Data, clustering, learning, evaluation and every artifact in one go."""
    t0 = time.perf_counter()
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(config)
    model, logs = train_model(ds, config, on_episode=on_episode)
    save_model(model, out / "model.json")
    write_log(logs, out / "learning_log.txt")
    report = evaluate(model, ds, config.mpe_epsilon)
    write_metrics(report, out / "metrics.csv")
    write_predictions(model, ds, out / "predictions.csv")
    write_firing(model, ds, out / "firing.csv")
    report.log_path = str(out / "learning_log.txt")
    report.wall_clock = time.perf_counter() - t0
    return report


def format_report(report: EvalReport) -> str:
    lines = [f"{'split':<6} {'step':<6} {'lead':>4} {'RMSE':>10} {'MPE(%)':>9}"]
    for split, step, lead, r, m in report.rows():
        lines.append(f"{split:<6} {step:<6} {str(lead):>4} {r:>10.5f} {m:>9.3f}")
    lines.append(f"rules: {','.join(map(str, report.rules))}")
    return "\n".join(lines)
