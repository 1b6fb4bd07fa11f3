"""Hourly load/weather series, renewable power curves and a synthetic scenario generator.

CSV schemas (UTF-8, header row required, ``.`` decimal separator)::

    load.csv     t,el_mw,hl_mw,cl_mw
    weather.csv  t,ghi_wm2,wind_ms,tamb_c
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

LOAD_HEADER = ("t", "el_mw", "hl_mw", "cl_mw")
WEATHER_HEADER = ("t", "ghi_wm2", "wind_ms", "tamb_c")


class DataError(ValueError):
    """Raised for malformed or inconsistent time-series input."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


@dataclass(frozen=True)
class LoadRecord:
    t: int
    el: float
    hl: float
    cl: float


@dataclass(frozen=True)
class WeatherRecord:
    t: int
    ghi: float
    wind: float
    t_amb: float


@dataclass(frozen=True)
class RenewableSpec:
    """PV array and wind farm parameters.

    ``a_pv`` defaults so that peak PV is about 50 MW at 1000 W/m2.
    """

    eta_v: float = 0.18
    a_pv: float = 277_778.0
    t_stc: float = 25.0
    n_wt: int = 100
    p_wt_rated: float = 2.0
    v_ci: float = 3.0
    v_rated: float = 12.0
    v_co: float = 25.0

    def __post_init__(self):
        if not 0.0 < self.eta_v < 1.0:
            raise ValueError(f"eta_v must be in (0, 1), got {self.eta_v}")
        if not self.v_ci < self.v_rated < self.v_co:
            raise ValueError("wind speeds must satisfy v_ci < v_rated < v_co")
        if self.n_wt < 0:
            raise ValueError("n_wt must be >= 0")
        if self.a_pv < 0 or self.p_wt_rated < 0:
            raise ValueError("a_pv and p_wt_rated must be >= 0")


def pv_power(ghi, t_cell, spec: RenewableSpec):
    """PV output in MW; ``ghi`` in W/m2, ``t_cell`` in degC. Works on arrays."""
    watts = spec.eta_v * spec.a_pv * np.asarray(ghi, dtype=float) * (
        1.0 + 0.001 * (np.asarray(t_cell, dtype=float) - spec.t_stc)
    )
    out = np.maximum(watts * 1e-6, 0.0)
    return float(out) if out.ndim == 0 else out


def wt_power(wind, spec: RenewableSpec):
    """Wind farm output in MW from the piecewise turbine curve."""
    v = np.asarray(wind, dtype=float)
    rated = spec.n_wt * spec.p_wt_rated
    ramp = rated * (v - spec.v_ci) / (spec.v_rated - spec.v_ci)
    out = np.where(
        (v >= spec.v_ci) & (v < spec.v_rated),
        ramp,
        np.where((v >= spec.v_rated) & (v <= spec.v_co), rated, 0.0),
    )
    return float(out) if out.ndim == 0 else out


def total_res(pv, wt):
    return pv + wt


def _check_hours(ts: Sequence[int], path) -> None:
    for i in range(1, len(ts)):
        if ts[i] == ts[i - 1]:
            raise SchemaError(f"{path}: duplicate hour t={ts[i]}")
        if ts[i] != ts[i - 1] + 1:
            raise SchemaError(f"{path}: gap in hourly series at t={ts[i - 1] + 1}")


def load_timeseries(path, kind: str):
    """Read a load or weather CSV into validated records sorted by hour."""
    if kind not in ("load", "weather"):
        raise ValueError(f"kind must be 'load' or 'weather', got {kind!r}")
    header = LOAD_HEADER if kind == "load" else WEATHER_HEADER
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise ParseError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            rows.append((lineno, t, vals))
    rows.sort(key=lambda r: r[1])
    _check_hours([r[1] for r in rows], path)

    records = []
    for lineno, t, vals in rows:
        if kind == "load":
            for name, v in zip(header[1:], vals):
                if v < 0:
                    raise SchemaError(f"{path}:{lineno}: column {name.split('_')[0]!r} is negative ({v})")
            records.append(LoadRecord(t, *vals))
        else:
            if vals[0] < 0:
                raise SchemaError(f"{path}:{lineno}: column 'ghi' is negative ({vals[0]})")
            if vals[1] < 0:
                raise SchemaError(f"{path}:{lineno}: column 'wind' is negative ({vals[1]})")
            records.append(WeatherRecord(t, *vals))
    return records


def _fmt(x: float) -> str:
    return repr(float(x))


def write_loads(path, loads: Sequence[LoadRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOAD_HEADER)
        for r in loads:
            w.writerow([r.t, _fmt(r.el), _fmt(r.hl), _fmt(r.cl)])


def write_weather(path, weather: Sequence[WeatherRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_HEADER)
        for r in weather:
            w.writerow([r.t, _fmt(r.ghi), _fmt(r.wind), _fmt(r.t_amb)])


# Diurnal shapes for the synthetic district (hour-of-day -> relative level).
# Electricity carries a morning shoulder and a sharp evening peak, cooling
# follows the afternoon heat, heating peaks at night and in the morning.
_EL_SHAPE = np.array([
    0.55, 0.52, 0.50, 0.50, 0.52, 0.58, 0.66, 0.74, 0.78, 0.80, 0.80, 0.80,
    0.80, 0.80, 0.82, 0.85, 0.90, 0.97, 1.00, 1.00, 0.97, 0.85, 0.72, 0.62,
])
_HL_SHAPE = np.array([
    0.85, 0.90, 0.95, 1.00, 1.00, 0.95, 0.85, 0.70, 0.55, 0.45, 0.40, 0.35,
    0.35, 0.35, 0.40, 0.45, 0.55, 0.65, 0.75, 0.80, 0.82, 0.82, 0.80, 0.80,
])
_CL_SHAPE = np.array([
    0.30, 0.28, 0.26, 0.25, 0.25, 0.27, 0.32, 0.40, 0.50, 0.62, 0.74, 0.85,
    0.93, 0.98, 1.00, 1.00, 0.96, 0.88, 0.76, 0.62, 0.50, 0.42, 0.36, 0.32,
])

# Peak levels in MW of the synthetic district. The heat peak is sized so the
# recovered cogeneration heat at the evening electric peak has somewhere to go.
SYNTH_PEAKS = {"el": 700.0, "hl": 450.0, "cl": 300.0}


def synth_scenario(seed: int, horizon: int, peaks: dict | None = None):
    """Deterministic synthetic district: diurnal shape plus seeded noise per channel.

    Returns ``(loads, weather)`` as lists of records, hours ``0..horizon-1``
    starting at midnight.
    """
    if horizon < 24:
        raise ValueError(f"horizon must be >= 24 hours, got {horizon}")
    peaks = {**SYNTH_PEAKS, **(peaks or {})}
    rng = np.random.default_rng(seed)
    t = np.arange(horizon)
    hod = t % 24
    day = t // 24
    n_days = int(day[-1]) + 1

    day_scale = 1.0 + 0.04 * rng.standard_normal((3, n_days))
    noise = 0.02 * rng.standard_normal((3, horizon))
    el = peaks["el"] * _EL_SHAPE[hod] * day_scale[0, day] * (1.0 + noise[0])
    hl = peaks["hl"] * _HL_SHAPE[hod] * day_scale[1, day] * (1.0 + noise[1])
    cl = peaks["cl"] * _CL_SHAPE[hod] * day_scale[2, day] * (1.0 + noise[2])

    clear = np.clip(np.sin(np.pi * (hod - 6) / 12.0), 0.0, None)
    cloud = np.clip(1.0 - 0.3 * rng.random(n_days), 0.0, 1.0)
    ghi = 1000.0 * clear * cloud[day] * (1.0 + 0.03 * rng.standard_normal(horizon))
    ghi = np.where(clear > 0, np.maximum(ghi, 0.0), 0.0)

    # AR(1) wind around a diurnal mean (windier at night).
    wind = np.empty(horizon)
    mean = 6.0 + 1.5 * np.cos(2 * np.pi * hod / 24.0)
    dev = 0.0
    for i in range(horizon):
        dev = 0.8 * dev + 0.9 * rng.standard_normal()
        wind[i] = max(mean[i] + dev, 0.0)
    t_amb = 27.0 + 8.0 * np.sin(np.pi * (hod - 9) / 12.0) + 0.5 * rng.standard_normal(horizon)

    loads = [LoadRecord(int(i), float(a), float(b), float(c)) for i, a, b, c in zip(t, el, hl, cl)]
    weather = [WeatherRecord(int(i), float(g), float(w), float(ta)) for i, g, w, ta in zip(t, ghi, wind, t_amb)]
    return loads, weather


def renewable_series(weather: Sequence[WeatherRecord], spec: RenewableSpec):
    """PV and wind series in MW; cell temperature taken as ambient."""
    ghi = np.array([w.ghi for w in weather])
    tamb = np.array([w.t_amb for w in weather])
    wind = np.array([w.wind for w in weather])
    return np.atleast_1d(pv_power(ghi, tamb, spec)), np.atleast_1d(wt_power(wind, spec))
