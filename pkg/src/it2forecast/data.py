"""Series generation, noise injection, CSV ingestion and windowing."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .clustering import Normalizer

SCHEMES = ("SW", "PM", "MO")
CALENDAR_NAMES = ("month", "weekday", "hour")
# calendar features are scaled by their natural ranges, not by what a
# (possibly short) training file happens to contain
CALENDAR_NORMALIZER = Normalizer([1.0, 1.0, 0.0], [12.0, 7.0, 23.0])
TRAIN_DAYS = 21


class DataError(ValueError):
    """Malformed input data; the message names the row or field."""


# --------------------------------------------------------------------------
# Mackey-Glass


@dataclass
class SeriesSpec:
    source: str = "mackey-glass"
    tau: float = 30.0
    x0: float = 1.2
    length: int = 1500
    start: int = 31
    h: float = 0.1
    noise_std_fraction: float = 0.0
    seed: int = 0
    path: str | None = None
    column: str = "value"

    def __post_init__(self):
        if self.source not in ("mackey-glass", "csv"):
            raise ValueError(f"unknown series source {self.source!r}")
        if self.noise_std_fraction < 0:
            raise ValueError("noise_std_fraction must be >= 0")
        if self.source == "mackey-glass":
            if self.length < 1 or self.start < 0:
                raise ValueError("length must be positive and start non-negative")
            if self.h <= 0:
                raise ValueError("integration step must be positive")
            if self.tau < 17:
                warnings.warn(f"tau={self.tau} < 17: the Mackey-Glass series is not chaotic", stacklevel=2)


def _mg_rhs(x, xd):
    return 0.2 * xd / (1.0 + xd ** 10) - 0.1 * x


def integrate_mackey_glass(tau: float, x0: float, t_end: float, h: float = 0.1) -> np.ndarray:
    """RK4 trajectory on the grid 0, h, 2h, ..., t_end with history x = x0 for t <= 0.

    The delayed value at off-grid times comes from cubic Hermite
    interpolation between stored grid points and their derivatives, which
    keeps the scheme fourth order (linear interpolation would cap it at two).
    """
    if tau < h:
        raise ValueError(f"delay tau={tau} must be at least the step h={h}")
    steps = int(round(t_end / h))
    x = np.empty(steps + 1)
    dx = np.empty(steps + 1)
    x[0] = x0
    lag = tau / h  # delay measured in grid steps

    def delayed(s):
        # x at grid position s - lag, where s may be fractional
        p = s - lag
        if p <= 0:
            return x0
        i = int(math.floor(p))
        w = p - i
        if w == 0.0:
            return x[i]
        h00 = (1 + 2 * w) * (1 - w) ** 2
        h10 = w * (1 - w) ** 2
        h01 = w * w * (3 - 2 * w)
        h11 = w * w * (w - 1)
        return h00 * x[i] + h01 * x[i + 1] + h * (h10 * dx[i] + h11 * dx[i + 1])

    for i in range(steps):
        xi = x[i]
        k1 = dx[i] = _mg_rhs(xi, delayed(i))
        dh = delayed(i + 0.5)
        k2 = _mg_rhs(xi + 0.5 * h * k1, dh)
        k3 = _mg_rhs(xi + 0.5 * h * k2, dh)
        k4 = _mg_rhs(xi + h * k3, delayed(i + 1))
        x[i + 1] = xi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def generate_mackey_glass(spec: SeriesSpec):
    """Sample the trajectory at integer times ``start .. start + length - 1``.

    Returns ``(t, x)`` arrays.
    """
    t_end = spec.start + spec.length - 1
    traj = integrate_mackey_glass(spec.tau, spec.x0, t_end, spec.h)
    per_unit = int(round(1.0 / spec.h))
    if abs(per_unit * spec.h - 1.0) > 1e-12:
        raise ValueError(f"step h={spec.h} does not divide the unit sampling interval")
    t = np.arange(spec.start, t_end + 1)
    return t, traj[t * per_unit]


def add_noise(series, std_fraction: float, seed: int = 0) -> np.ndarray:
    """Add zero-mean Gaussian noise scaled by the clean series' std."""
    series = np.asarray(series, dtype=float)
    if std_fraction < 0:
        raise ValueError("std_fraction must be >= 0")
    if std_fraction == 0:
        return series.copy()
    rng = np.random.default_rng(seed)
    return series + rng.normal(0.0, std_fraction * series.std(), size=series.shape)


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass
class SeriesTable:
    """Hourly records loaded from CSV."""

    timestamps: list
    columns: dict
    train_mask: np.ndarray | None

    @property
    def hourly(self) -> bool:
        return bool(self.timestamps) and isinstance(self.timestamps[0], datetime)

    def __len__(self):
        return len(self.timestamps)

    @property
    def calendar(self) -> np.ndarray:
        return calendar_features(self.timestamps)


def calendar_features(timestamps) -> np.ndarray:
    """(month, weekday, hour) with Monday = 1 and hour in 0..23."""
    return np.array([[ts.month, ts.isoweekday(), ts.hour] for ts in timestamps], dtype=float).reshape(-1, 3)


def split_by_day(timestamps, train_days: int = TRAIN_DAYS) -> np.ndarray:
    return np.array([ts.day <= train_days for ts in timestamps], dtype=bool)


def _parse_stamp(text, integer):
    return int(text) if integer else datetime.fromisoformat(text)


def load_csv(path, columns=None, train_days: int = TRAIN_DAYS) -> SeriesTable:
    """Read ``timestamp,value`` or ``timestamp,unmet_power,price``.

    Timestamps are either ISO-8601 date-times exactly one hour apart, or
    consecutive integer time indices (as written for generated series).
    Hourly files get the day-of-month split; indexed files have
    ``train_mask = None`` and are split by the caller.  Any bad row raises
    ``DataError`` naming its row number (the header is row 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise DataError(f"{path}: header must start with 'timestamp' followed by value columns, got {header}")
        names = header[1:]
        if columns is not None:
            missing = [c for c in columns if c not in names]
            if missing:
                raise DataError(f"{path}: missing column(s) {missing}; available {names}")
        stamps, rows = [], []
        integer = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                raise DataError(f"{path}: row {lineno} is empty")
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            text = row[0].strip()
            if integer is None:
                integer = text.lstrip("-").isdigit()
            try:
                ts = _parse_stamp(text, integer)
            except ValueError:
                kind = "integer time index" if integer else "ISO-8601 timestamp"
                raise DataError(f"{path}: row {lineno}: cannot parse {text!r} as {kind}") from None
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric value in {row[1:]}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno}: non-finite value in {row[1:]}")
            if stamps:
                step = 1 if integer else timedelta(hours=1)
                if ts - stamps[-1] != step:
                    unit = "index" if integer else "hour"
                    raise DataError(f"{path}: row {lineno}: timestamp {text} does not follow {stamps[-1]} "
                                    f"by one {unit} (gaps are not imputed)")
            stamps.append(ts)
            rows.append(vals)
    if not stamps:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    keep = names if columns is None else list(columns)
    cols = {name: data[:, names.index(name)] for name in keep}
    mask = None if integer else split_by_day(stamps, train_days)
    return SeriesTable(stamps, cols, mask)


def synthetic_microgrid(days: int = 366, start: str = "2020-01-01", seed: int = 0) -> SeriesTable:
    """Hourly unmet-power and price series with daily and weekly cycles."""
    rng = np.random.default_rng(seed)
    t0 = datetime.fromisoformat(start)
    stamps = [t0 + timedelta(hours=i) for i in range(days * 24)]
    cal = calendar_features(stamps)
    hour, wday, month = cal[:, 2], cal[:, 1], cal[:, 0]
    daily = np.sin(2 * np.pi * (hour - 7) / 24.0)
    weekend = (wday >= 6).astype(float)
    season = np.cos(2 * np.pi * (month - 1) / 12.0)
    power = 40 + 15 * daily - 8 * weekend + 6 * season + rng.normal(0, 2.0, len(stamps))
    power = np.maximum(power, 1.0)
    price = 50 + 20 * np.maximum(daily, 0) ** 2 + 5 * season - 6 * weekend + rng.normal(0, 3.0, len(stamps))
    price = np.maximum(price, 1.0)
    return SeriesTable(stamps, {"unmet_power": power, "price": price}, split_by_day(stamps))


def write_csv(path, timestamps, columns: dict) -> None:
    names = list(columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *names])
        for i, ts in enumerate(timestamps):
            stamp = ts.isoformat(timespec="minutes") if isinstance(ts, datetime) else str(ts)
            w.writerow([stamp, *(repr(float(columns[n][i])) for n in names)])


# --------------------------------------------------------------------------
# windowing


@dataclass(frozen=True)
class WindowSpec:
    """Lag/lead layout relative to the prediction origin t.

    ``input_lags`` are offsets of the inputs (all < 0 or 0), ``output_leads``
    offsets of the targets.  With ``calendar`` set, (month, weekday, hour) at
    ``t + calendar_offset`` are prepended to the inputs.
    """

    input_lags: tuple = tuple(range(-18, 0, 2))
    output_leads: tuple = (0, 2, 4)
    scheme: str = "MO"
    calendar: bool = False
    calendar_offset: int = -1

    def __post_init__(self):
        object.__setattr__(self, "input_lags", tuple(int(v) for v in self.input_lags))
        object.__setattr__(self, "output_leads", tuple(int(v) for v in self.output_leads))
        lags, leads = self.input_lags, self.output_leads
        if not lags or not leads:
            raise ValueError("need at least one input lag and one output lead")
        if any(b <= a for a, b in zip(lags, lags[1:])) or lags[-1] > 0:
            raise ValueError(f"input lags must be strictly increasing and <= 0, got {lags}")
        if any(b <= a for a, b in zip(leads, leads[1:])):
            raise ValueError(f"output leads must be strictly increasing, got {leads}")
        if leads[0] <= lags[-1]:
            raise ValueError("first output lead must come after the last input lag")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "SW":
            self.stride  # validates

    @property
    def n_inputs(self) -> int:
        return len(self.input_lags) + (3 if self.calendar else 0)

    @property
    def K(self) -> int:
        return len(self.output_leads)

    @property
    def n_calendar(self) -> int:
        return 3 if self.calendar else 0

    @property
    def stride(self) -> int:
        """Shift used by sliding-window inference."""
        lags, leads = self.input_lags, self.output_leads
        steps = np.diff(lags + (leads[0],))
        stride = int(steps[0])
        if np.any(steps != stride) or np.any(np.diff(leads) != stride):
            raise ValueError("sliding-window inference needs equally spaced lags and leads "
                             f"with lead spacing equal to the lag spacing (lags {lags}, leads {leads})")
        return stride

    @property
    def span(self) -> int:
        return self.output_leads[-1] - self.input_lags[0] + 1


@dataclass
class WindowedDataset:
    """Normalized windows plus everything needed to undo the scaling.

    ``X`` is (N, n) with calendar columns first, ``Y`` (N, K) holds every
    lead regardless of scheme.  ``calendar_steps`` (N, K, 3) carries the
    normalized calendar inputs a sliding-window model needs at each step.
    """

    X: np.ndarray
    Y: np.ndarray
    Y_raw: np.ndarray
    origin: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    value_normalizer: Normalizer
    spec: WindowSpec
    calendar_steps: np.ndarray | None = None
    dropped: int = 0
    input_names: list = field(default_factory=list)
    times: list | None = None

    def time_of(self, row: int):
        """Timestamp of raw series row ``row`` (the row number itself if none were given)."""
        return row if self.times is None else self.times[row]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.Y.shape[1]

    def part(self, which: str):
        idx = self.train_idx if which == "train" else self.test_idx
        return self.X[idx], self.Y[idx]

    def training_targets(self, k: int | None = None) -> np.ndarray:
        """Targets a model is fitted on: all leads (MO), lead ``k`` (PM) or the first lead (SW)."""
        Y = self.Y[self.train_idx]
        if self.spec.scheme == "MO" and k is None:
            return Y
        return Y[:, [0 if k is None else k]]

    def denormalize(self, Y) -> np.ndarray:
        return self.value_normalizer.invert(Y)


def build_windows(series, spec: WindowSpec, *, train_mask=None, train_size: int | None = None,
                  timestamps=None, normalizer: Normalizer | None = None) -> WindowedDataset:
    """Cut a univariate series into (inputs, targets) windows.

    The split is given either by ``train_size`` (a prefix, range based) or by
    a per-row ``train_mask``.  A window is assigned to a split only when every
    row it touches lies in that split; windows straddling a seam are dropped
    and counted.  The value normalizer is fitted on the training rows unless
    one is supplied.
    """
    v = np.asarray(series, dtype=float)
    if v.ndim != 1:
        raise ValueError("series must be one-dimensional")
    N = len(v)
    if N < spec.span:
        raise ValueError(f"series of length {N} is too short; this window layout needs at least {spec.span} points")
    if train_mask is None:
        train_size = N if train_size is None else int(train_size)
        if not 0 < train_size <= N:
            raise ValueError(f"train_size must lie in (0, {N}], got {train_size}")
        train_mask = np.arange(N) < train_size
    train_mask = np.asarray(train_mask, dtype=bool)
    if train_mask.shape != (N,):
        raise ValueError("train_mask length differs from the series")
    if spec.calendar and timestamps is None:
        raise ValueError("calendar features requested but no timestamps given")

    lags = np.array(spec.input_lags)
    leads = np.array(spec.output_leads)
    cal_offsets = leads - leads[0] + spec.calendar_offset
    lo_off = min(lags[0], cal_offsets[0]) if spec.calendar else lags[0]
    hi_off = max(leads[-1], cal_offsets[-1]) if spec.calendar else leads[-1]
    t = np.arange(-lo_off, N - hi_off)
    rows = np.concatenate([t[:, None] + lags, t[:, None] + leads], axis=1)
    in_train = train_mask[rows]
    all_train = in_train.all(axis=1)
    all_test = (~in_train).all(axis=1)
    keep = all_train | all_test
    dropped = int((~keep).sum())
    t, all_train = t[keep], all_train[keep]
    if not np.any(all_train):
        raise ValueError("no complete training window; the training portion is too short")

    if normalizer is None:
        normalizer = Normalizer.fit(v[train_mask], names=["value"])
    vn = normalizer.apply(v)
    X = vn[t[:, None] + lags]
    Y = vn[t[:, None] + leads]
    Y_raw = v[t[:, None] + leads]
    names = [f"x(t{o:+d})" for o in spec.input_lags]
    cal_steps = None
    if spec.calendar:
        cal = CALENDAR_NORMALIZER.apply(calendar_features(timestamps))
        X = np.concatenate([cal[t + spec.calendar_offset], X], axis=1)
        # calendar each sliding-window step sees once its window has moved on
        cal_steps = cal[t[:, None] + cal_offsets[None, :]]
        names = [f"{c}(t{spec.calendar_offset:+d})" for c in CALENDAR_NAMES] + names
    idx = np.arange(len(t))
    return WindowedDataset(
        X=X, Y=Y, Y_raw=Y_raw, origin=t, train_idx=idx[all_train], test_idx=idx[~all_train],
        value_normalizer=normalizer, spec=spec, calendar_steps=cal_steps, dropped=dropped,
        input_names=names, times=None if timestamps is None else list(timestamps),
    )


def chaotic_windows(series, spec: WindowSpec = WindowSpec(), train_size: int = 1000) -> WindowedDataset:
    return build_windows(series, spec, train_size=train_size)


def microgrid_windows(table: SeriesTable, column: str, scheme: str = "MO") -> WindowedDataset:
    spec = WindowSpec(input_lags=tuple(range(-9, 0)), output_leads=(0, 1, 2), scheme=scheme, calendar=True)
    return build_windows(table.columns[column], spec, train_mask=table.train_mask, timestamps=table.timestamps)
