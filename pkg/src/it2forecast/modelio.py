"""JSON model files: trained parameters, window layout and scaling.

Floats are written with ``repr`` precision by the json module, so a save /
load round trip is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import Normalizer
from .data import CALENDAR_NORMALIZER, SCHEMES, WindowSpec
from .network import NetworkParams

FORMAT = "it2forecast-model"
VERSION = 1


class ModelFileError(ValueError):
    """Malformed model file.  ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class ForecastModel:
    """One or more trained networks plus what inference needs around them.

    MO and SW use a single network; PM keeps one single-output network per
    lead.
    """

    networks: list
    scheme: str
    window: WindowSpec
    value_normalizer: Normalizer
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        expected = self.window.K if self.scheme == "PM" else 1
        if len(self.networks) != expected:
            raise ValueError(f"{self.scheme} needs {expected} network(s), got {len(self.networks)}")
        outs = 1 if self.scheme in ("PM", "SW") else self.window.K
        for i, p in enumerate(self.networks):
            if p.K != outs or p.n != self.window.n_inputs:
                raise ValueError(f"network {i} has (n={p.n}, K={p.K}); the {self.scheme} layout "
                                 f"needs (n={self.window.n_inputs}, K={outs})")

    @property
    def rule_counts(self) -> list:
        return [p.M for p in self.networks]

    @property
    def input_normalizer(self) -> Normalizer:
        nc, nl = self.window.n_calendar, len(self.window.input_lags)
        lo = np.concatenate([CALENDAR_NORMALIZER.min[:nc], np.repeat(self.value_normalizer.min, nl)])
        hi = np.concatenate([CALENDAR_NORMALIZER.max[:nc], np.repeat(self.value_normalizer.max, nl)])
        return Normalizer(lo, hi)


def params_to_dict(p: NetworkParams) -> dict:
    return {
        "dims": {"n": p.n, "M": p.M, "K": p.K},
        "flags": {"use_co": p.use_co, "use_link": p.use_link, "shared_consequent": p.shared_consequent},
        "antecedents": {k: getattr(p, k).tolist() for k in ("m1", "m2", "sigma")},
        "co_antecedents": {"m": p.co_m.tolist(), "sigma": p.co_sigma.tolist()},
        "consequents": {"c": p.c.tolist(), "s": p.s.tolist()},
        "reduction": {"q_l": p.q_l.tolist(), "q_r": p.q_r.tolist(), "q_o": p.q_o.tolist()},
        "link": {"l": p.l},
    }


def _get(obj, key, where):
    if not isinstance(obj, dict):
        raise ModelFileError(where, "expected an object")
    if key not in obj:
        raise ModelFileError(f"{where}.{key}" if where else key, "missing")
    return obj[key]


def _array(value, shape, where):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ModelFileError(where, "not a numeric array") from None
    if shape is not None and arr.shape != shape:
        if arr.size == 0 and math.prod(shape) == 0:
            return arr.reshape(shape)
        raise ModelFileError(where, f"shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(where, "contains non-finite values")
    return arr


def _int(value, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int) or (minimum is not None and value < minimum):
        bound = "" if minimum is None else f" >= {minimum}"
        raise ModelFileError(where, f"expected an integer{bound}, got {value!r}")
    return value


def _bool(value, where):
    if not isinstance(value, bool):
        raise ModelFileError(where, f"expected true/false, got {value!r}")
    return value


def params_from_dict(d, where="network") -> NetworkParams:
    dims = _get(d, "dims", where)
    n = _int(_get(dims, "n", f"{where}.dims"), f"{where}.dims.n", 1)
    M = _int(_get(dims, "M", f"{where}.dims"), f"{where}.dims.M", 0)
    K = _int(_get(dims, "K", f"{where}.dims"), f"{where}.dims.K", 1)
    fl = _get(d, "flags", where)
    flags = {k: _bool(_get(fl, k, f"{where}.flags"), f"{where}.flags.{k}")
             for k in ("use_co", "use_link", "shared_consequent")}
    kc = 1 if flags["shared_consequent"] else K
    ante, co = _get(d, "antecedents", where), _get(d, "co_antecedents", where)
    cons, red = _get(d, "consequents", where), _get(d, "reduction", where)
    l = _get(_get(d, "link", where), "l", f"{where}.link")
    if isinstance(l, bool) or not isinstance(l, (int, float)) or not math.isfinite(l):
        raise ModelFileError(f"{where}.link.l", f"expected a finite number, got {l!r}")

    fields = {
        "m1": (ante, "m1", (M, n), "antecedents"), "m2": (ante, "m2", (M, n), "antecedents"),
        "sigma": (ante, "sigma", (M, n), "antecedents"),
        "co_m": (co, "m", (K, n), "co_antecedents"), "co_sigma": (co, "sigma", (K, n), "co_antecedents"),
        "c": (cons, "c", (M, kc, n + 1), "consequents"), "s": (cons, "s", (M, kc, n + 1), "consequents"),
        "q_l": (red, "q_l", (K,), "reduction"), "q_r": (red, "q_r", (K,), "reduction"),
        "q_o": (red, "q_o", (K,), "reduction"),
    }
    arrays = {}
    for name, (src, key, shape, group) in fields.items():
        path = f"{where}.{group}.{key}"
        arrays[name] = _array(_get(src, key, f"{where}.{group}"), shape, path)
    p = NetworkParams(**arrays, l=float(l), **flags)
    _check_fields(p, where)
    return p


def _check_fields(p: NetworkParams, where):
    checks = [
        ("antecedents.m1", np.any(p.m1 > p.m2), "m1 <= m2"),
        ("antecedents.sigma", np.any(p.sigma <= 0), "sigma > 0"),
        ("co_antecedents.sigma", np.any(p.co_sigma <= 0), "sigma > 0"),
        ("consequents.s", np.any(p.s < 0), "s >= 0"),
        ("reduction.q_l", np.any((p.q_l < 0) | (p.q_l > 1)), "q_l in [0, 1]"),
        ("reduction.q_r", np.any((p.q_r < 0) | (p.q_r > 1)), "q_r in [0, 1]"),
        ("reduction.q_o", np.any((p.q_o < 0) | (p.q_o > 1)), "q_o in [0, 1]"),
        ("link.l", not 0.0 <= p.l <= 1.0, "l in [0, 1]"),
        ("link.l", not p.use_link and p.l != 0.0, "l == 0 when the link layer is disabled"),
    ]
    for name, bad, rule in checks:
        if bad:
            raise ModelFileError(f"{where}.{name}", f"constraint violation: {rule}")


def model_to_dict(model: ForecastModel) -> dict:
    w = model.window
    return {
        "format": FORMAT,
        "version": VERSION,
        "scheme": model.scheme,
        "window": {"input_lags": list(w.input_lags), "output_leads": list(w.output_leads),
                   "calendar": w.calendar, "calendar_offset": w.calendar_offset},
        "normalization": {"value_min": model.value_normalizer.min.tolist(),
                          "value_max": model.value_normalizer.max.tolist(),
                          "input_min": model.input_normalizer.min.tolist(),
                          "input_max": model.input_normalizer.max.tolist()},
        "networks": [params_to_dict(p) for p in model.networks],
        "meta": model.meta,
    }


def model_from_dict(d) -> ForecastModel:
    if _get(d, "format", "") != FORMAT:
        raise ModelFileError("format", f"expected {FORMAT!r}, got {d.get('format')!r}")
    if _get(d, "version", "") != VERSION:
        raise ModelFileError("version", f"unsupported version {d.get('version')!r}")
    scheme = _get(d, "scheme", "")
    if scheme not in SCHEMES:
        raise ModelFileError("scheme", f"expected one of {SCHEMES}, got {scheme!r}")
    win = _get(d, "window", "")
    try:
        window = WindowSpec(
            input_lags=tuple(_get(win, "input_lags", "window")),
            output_leads=tuple(_get(win, "output_leads", "window")),
            scheme=scheme,
            calendar=_bool(_get(win, "calendar", "window"), "window.calendar"),
            calendar_offset=_int(_get(win, "calendar_offset", "window"), "window.calendar_offset"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError("window", str(exc)) from None
    norm = _get(d, "normalization", "")
    lo = _array(_get(norm, "value_min", "normalization"), (1,), "normalization.value_min")
    hi = _array(_get(norm, "value_max", "normalization"), (1,), "normalization.value_max")
    if not hi[0] > lo[0]:
        raise ModelFileError("normalization.value_max", "must exceed value_min")
    nets = _get(d, "networks", "")
    if not isinstance(nets, list) or not nets:
        raise ModelFileError("networks", "expected a non-empty list")
    params = [params_from_dict(net, f"networks[{i}]") for i, net in enumerate(nets)]
    meta = d.get("meta", {})
    try:
        model = ForecastModel(params, scheme, window, Normalizer(lo, hi), meta if isinstance(meta, dict) else {})
    except ValueError as exc:
        raise ModelFileError("networks", str(exc)) from None
    # per-input ranges are redundant with the value range; reject disagreement
    derived = model.input_normalizer
    for key, ref in (("input_min", derived.min), ("input_max", derived.max)):
        if key in norm:
            got = _array(norm[key], ref.shape, f"normalization.{key}")
            if not np.array_equal(got, ref):
                raise ModelFileError(f"normalization.{key}", "disagrees with value range and window layout")
    return model


def save_model(model: ForecastModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> ForecastModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return model_from_dict(d)
