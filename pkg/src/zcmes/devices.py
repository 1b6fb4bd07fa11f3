"""Conversion and storage device models.

All step functions accept scalars or numpy arrays for the loading rate so the
same code path serves the environment (one action) and the swarm baseline
(thousands of candidate actions at once). Time step is fixed at one hour.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DT = 1.0  # h

# Default part-load curves: cubic, sum of coefficients 1 (rated efficiency at
# full load) and about 85 % of rated efficiency at 30 % load.
DEFAULT_PLR = (0.70, 0.60, -0.45, 0.15)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConverterSpec:
    """A dispatchable converter.

    ``eta_rated`` is the primary efficiency or COP (electric efficiency for the
    cogeneration units). ``eta_aux`` is the secondary (heat) efficiency of a
    cogeneration unit. ``heating_value`` is MWh per fuel unit (m3 gas, t coal).
    ``emission_factor`` is tCO2 per MWh of electric output for the gas turbine
    and tCO2 per fuel unit for the coal plant and the boiler.
    """

    name: str
    p_rated: float
    eta_rated: float
    plr_coeffs: tuple = DEFAULT_PLR
    delta_min: float = 0.0
    delta_max: float = 1.0
    ramp_frac: float = 0.20
    emission_factor: float = 0.0
    fuel: str = "none"
    eta_aux: float = 0.0
    aux_plr_coeffs: tuple = DEFAULT_PLR
    heating_value: float = 0.0
    plr_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "plr_coeffs", tuple(float(k) for k in self.plr_coeffs))
        object.__setattr__(self, "aux_plr_coeffs", tuple(float(k) for k in self.aux_plr_coeffs))
        if not 0.0 <= self.delta_min <= self.delta_max <= 1.0:
            raise SpecError(f"{self.name}: need 0 <= delta_min <= delta_max <= 1")
        if self.p_rated <= 0:
            raise SpecError(f"{self.name}: p_rated must be > 0")
        if self.eta_rated <= 0:
            raise SpecError(f"{self.name}: eta_rated must be > 0")
        if not self.plr_coeffs:
            raise SpecError(f"{self.name}: plr_coeffs must be non-empty")
        if self.fuel not in ("gas", "coal", "electricity", "heat", "none"):
            raise SpecError(f"{self.name}: unknown fuel {self.fuel!r}")
        if self.plr_enabled:
            grid = np.linspace(max(self.delta_min, 1e-3), self.delta_max, 201)
            for coeffs in (self.plr_coeffs, self.aux_plr_coeffs):
                if np.any(np.polyval(coeffs[::-1], grid) <= 0):
                    raise SpecError(f"{self.name}: part-load polynomial is not positive on the loading band")

    @property
    def ramp_limit(self) -> float:
        return self.ramp_frac * self.p_rated


@dataclass(frozen=True)
class StorageSpec:
    name: str
    q_cap: float
    p_rated: float
    eta_ch: float = 0.95
    eta_dch: float = 0.95
    soc_min: float = 0.1
    soc_max: float = 0.9
    psi1: float = 1000.0
    psi2: float = 1000.0
    delta_min: float = -1.0
    delta_max: float = 1.0
    # Physical envelope beyond the soft bounds, as a SOC margin.
    hard_margin: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise SpecError(f"{self.name}: need 0 <= soc_min < soc_max <= 1")
        if not (0.0 < self.eta_ch <= 1.0 and 0.0 < self.eta_dch <= 1.0):
            raise SpecError(f"{self.name}: efficiencies must be in (0, 1]")
        if self.q_cap <= 0 or self.p_rated <= 0:
            raise SpecError(f"{self.name}: q_cap and p_rated must be > 0")
        if not -1.0 <= self.delta_min <= 0.0 <= self.delta_max <= 1.0:
            raise SpecError(f"{self.name}: loading band must contain 0 within [-1, 1]")

    @property
    def soc_floor(self) -> float:
        return self.soc_min - self.hard_margin

    @property
    def soc_ceiling(self) -> float:
        return self.soc_max + self.hard_margin


@dataclass
class StorageState:
    soc: float = 0.5

    def __post_init__(self):
        if not np.all(np.isfinite(self.soc)):
            raise ValueError("SOC must be finite")


class DeviceOutput(NamedTuple):
    """Per-step device flows. Inputs (``e_in``/``h_in``) are drawn from the carriers."""

    e_out: object = 0.0
    h_out: object = 0.0
    c_out: object = 0.0
    fuel_in: object = 0.0
    co2: object = 0.0
    u: object = 0
    e_in: object = 0.0
    h_in: object = 0.0
    band_ok: object = True


def _poly(coeffs, x):
    return np.polyval(np.asarray(coeffs)[::-1], x)


def plr_eta(spec: ConverterSpec, delta, enabled: bool | None = None, aux: bool = False):
    """Effective efficiency/COP at loading rate ``delta``.

    With part-load correction: ``eta_r * sum_o k_o delta**o``; clamped to
    ``(0, 1.5 * eta_r]``.
    """
    eta_r = spec.eta_aux if aux else spec.eta_rated
    on = spec.plr_enabled if enabled is None else enabled
    d = np.asarray(delta, dtype=float)
    if not on:
        out = np.full_like(d, eta_r)
    else:
        coeffs = spec.aux_plr_coeffs if aux else spec.plr_coeffs
        out = np.clip(eta_r * _poly(coeffs, d), 1e-9 * eta_r, 1.5 * eta_r)
    return float(out) if out.ndim == 0 else out


def commit(spec, delta):
    """Map a raw loading rate onto the unit-commitment band.

    Returns ``(delta_eff, u, band_ok)``. Requests below ``delta_min`` switch the
    unit off; requests above ``delta_max`` are clipped. ``band_ok`` reports
    whether the raw request already satisfied ``u*dmin <= delta <= u*dmax``.
    """
    d = np.asarray(delta, dtype=float)
    u = (d > 0) & (d >= spec.delta_min)
    d_eff = np.where(u, np.minimum(d, spec.delta_max), 0.0)
    ok = np.where(u, d <= spec.delta_max, d == 0)
    if d.ndim == 0:
        return float(d_eff), int(u), bool(ok)
    return d_eff, u.astype(int), ok


def converter_output(spec: ConverterSpec, delta, u=1):
    """Rated-capacity scaling ``u * delta * P_r`` and the band flag (never raises)."""
    d = np.asarray(delta, dtype=float)
    u = np.asarray(u)
    ok = (u * spec.delta_min <= d) & (d <= u * spec.delta_max)
    out = np.where(u > 0, d * spec.p_rated, 0.0)
    if out.ndim == 0:
        return float(out), bool(ok)
    return out, ok


def chp_gas_step(spec: ConverterSpec, delta, enabled: bool | None = None) -> DeviceOutput:
    """Gas turbine cogeneration.

    Electric output scales with the loading rate; the fuel energy is electric
    output over the part-load electric efficiency and the recovered heat is
    that fuel energy times the part-load heat efficiency. Emissions are
    proportional to electric output.
    """
    d, u, ok = commit(spec, delta)
    e = d * spec.p_rated
    eta_e = plr_eta(spec, d, enabled)
    eta_h = plr_eta(spec, d, enabled, aux=True)
    fuel_mwh = e / eta_e
    gas = fuel_mwh / spec.heating_value
    return DeviceOutput(e_out=e, h_out=fuel_mwh * eta_h, fuel_in=gas, co2=e * spec.emission_factor, u=u, band_ok=ok)


def cfp_step(spec: ConverterSpec, delta, enabled: bool | None = None) -> DeviceOutput:
    """Coal-fired cogeneration: coal mass from electric output, heat from coal energy."""
    d, u, ok = commit(spec, delta)
    e = d * spec.p_rated
    coal = e / (plr_eta(spec, d, enabled) * spec.heating_value)
    heat = spec.eta_aux * coal * spec.heating_value
    return DeviceOutput(e_out=e, h_out=heat, fuel_in=coal, co2=coal * spec.emission_factor, u=u, band_ok=ok)


def thermal_step(spec: ConverterSpec, delta, kind: str, enabled: bool | None = None) -> DeviceOutput:
    """Gas boiler (``GB``) or water-source heat pump (``WSHP``)."""
    d, u, ok = commit(spec, delta)
    h = d * spec.p_rated
    inp = h / plr_eta(spec, d, enabled)
    if kind == "GB":
        gas = inp / spec.heating_value
        return DeviceOutput(h_out=h, fuel_in=gas, co2=gas * spec.emission_factor, u=u, band_ok=ok)
    if kind == "WSHP":
        return DeviceOutput(h_out=h, e_in=inp, fuel_in=inp, u=u, band_ok=ok)
    raise ValueError(f"unknown thermal device kind {kind!r}")


def chiller_step(spec: ConverterSpec, delta, kind: str, enabled: bool | None = None) -> DeviceOutput:
    """Electric (``EC``) or absorption (``AC``) chiller."""
    d, u, ok = commit(spec, delta)
    c = d * spec.p_rated
    inp = c / plr_eta(spec, d, enabled)
    if kind == "EC":
        return DeviceOutput(c_out=c, e_in=inp, fuel_in=inp, u=u, band_ok=ok)
    if kind == "AC":
        return DeviceOutput(c_out=c, h_in=inp, fuel_in=inp, u=u, band_ok=ok)
    raise ValueError(f"unknown chiller kind {kind!r}")


def soc_penalty(soc, spec: StorageSpec):
    """Exponential penalty outside ``[soc_min, soc_max]``, zero inside."""
    s = np.asarray(soc, dtype=float)
    out = np.where(
        s < spec.soc_min,
        spec.psi1 * np.exp(spec.soc_min - s),
        np.where(s > spec.soc_max, spec.psi2 * np.exp(s - spec.soc_max), 0.0),
    )
    return float(out) if out.ndim == 0 else out


def storage_power_limits(soc, spec: StorageSpec):
    """Largest discharge and charge power (both >= 0, MW) that keep SOC in the hard envelope."""
    s = np.asarray(soc, dtype=float)
    dis = np.clip((s - spec.soc_floor) * spec.q_cap * spec.eta_dch / DT, 0.0, spec.p_rated)
    ch = np.clip((spec.soc_ceiling - s) * spec.q_cap / (spec.eta_ch * DT), 0.0, spec.p_rated)
    return dis, ch


def storage_step(state: StorageState, spec: StorageSpec, delta):
    """Advance storage by one hour.

    Positive power discharges, negative charges. Power is limited so SOC stays
    inside the hard envelope ``[soc_min - margin, soc_max + margin]``; the soft
    band violation is priced by :func:`soc_penalty`. Returns
    ``(new_state, power_mw, penalty)``.
    """
    soc = np.asarray(state.soc, dtype=float)
    d = np.clip(np.asarray(delta, dtype=float), spec.delta_min, spec.delta_max)
    p = d * spec.p_rated
    dis_max, ch_max = storage_power_limits(soc, spec)
    p = np.clip(p, -ch_max, dis_max)
    eta = np.where(p < 0, spec.eta_ch, 1.0 / spec.eta_dch)
    new_soc = soc - eta * p * DT / spec.q_cap
    pen = soc_penalty(new_soc, spec)
    if new_soc.ndim == 0:
        return StorageState(float(new_soc)), float(p), float(pen)
    return StorageState(new_soc), p, pen


def ramp_penalty(prev_out, curr_out, spec: ConverterSpec, omega: float):
    """Linear penalty on output changes larger than the ramp limit (boundary allowed)."""
    diff = np.abs(np.asarray(curr_out, dtype=float) - np.asarray(prev_out, dtype=float))
    out = np.where(diff > spec.ramp_limit, omega * diff, 0.0)
    return float(out) if out.ndim == 0 else out
