"""CO2 accounting: MES emissions, post-combustion and direct-air capture, CRI/CCRR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .devices import commit

VARIANTS = ("none", "pcc_only", "pcc_dac1", "pcc_dac2")
ENV_SHARE = 0.1  # ambient CO2 attributed to the district, fraction of MES emissions
GJ_PER_MWH = 3.6


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


@dataclass(frozen=True)
class CdrSpec:
    """Capture plant parameters. Capacities in tCO2/h of processed CO2.

    DAC1 (aqueous solvent) regenerates with natural gas (``dac_gas`` GJ/t);
    DAC2 (solid sorbent) regenerates with low-grade heat (``dac_heat`` MWh/t).
    """

    variant: str = "none"
    pcc_cap: float = 300.0
    pcc_eff: float = 0.90
    pcc_elec: float = 0.30
    pcc_solvent: float = 53.68
    dac_cap: float = 200.0
    dac_eff: float = 0.90
    dac_elec: float = 0.25
    dac_heat: float = 1.5
    dac_gas: float = 0.0
    dac_sorbent: float = 3.0
    pcc_delta_min: float = 0.0
    pcc_delta_max: float = 1.0
    dac_delta_min: float = 0.0
    dac_delta_max: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown CDR variant {self.variant!r}")
        if not (0 < self.pcc_eff <= 1 and 0 < self.dac_eff <= 1):
            raise ValueError("capture efficiencies must be in (0, 1]")
        for name in ("pcc_cap", "dac_cap", "pcc_elec", "pcc_solvent", "dac_elec", "dac_heat", "dac_gas", "dac_sorbent"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def has_pcc(self) -> bool:
        return self.variant != "none"

    @property
    def has_dac(self) -> bool:
        return self.variant in ("pcc_dac1", "pcc_dac2")

    @property
    def dac_kind(self) -> str | None:
        return {"pcc_dac1": "dac1", "pcc_dac2": "dac2"}.get(self.variant)


class _Band(NamedTuple):
    delta_min: float
    delta_max: float


@dataclass(frozen=True)
class EmissionLedger:
    mes_emit: float
    total_emit: float
    pcc_cap: float
    dac_cap: float
    released: float

    @property
    def captured(self) -> float:
        return self.pcc_cap + self.dac_cap


class PccOutput(NamedTuple):
    captured: object
    elec: object
    solvent: object


class DacOutput(NamedTuple):
    captured: object
    elec: object
    heat: object
    gas: object
    sorbent: object


def mes_emissions(gt_co2, cfp_co2, gb_co2):
    """Return ``(mes, total)`` where total adds the ambient share."""
    mes = gt_co2 + cfp_co2 + gb_co2
    return mes, mes + ENV_SHARE * mes


def pcc_step(spec: CdrSpec, delta, u=1) -> PccOutput:
    if not spec.has_pcc:
        z = np.zeros_like(np.asarray(delta, dtype=float))
        return PccOutput(z * 1, z * 1, z * 1) if z.ndim else PccOutput(0.0, 0.0, 0.0)
    d, on, _ = commit(_Band(spec.pcc_delta_min, spec.pcc_delta_max), delta)
    captured = np.asarray(u) * on * spec.pcc_eff * d * spec.pcc_cap
    out = PccOutput(captured, spec.pcc_elec * captured, spec.pcc_solvent * captured)
    if np.ndim(captured) == 0:
        return PccOutput(*(float(x) for x in out))
    return out


def dac_step(spec: CdrSpec, delta, u=1) -> DacOutput:
    """Direct-air capture; DAC1 reports gas (GJ) and no heat, DAC2 heat (MWh) and no gas."""
    d_arr = np.asarray(delta, dtype=float)
    if not spec.has_dac:
        if d_arr.ndim == 0:
            return DacOutput(0.0, 0.0, 0.0, 0.0, 0.0)
        z = np.zeros_like(d_arr)
        return DacOutput(z, z.copy(), z.copy(), z.copy(), z.copy())
    d, on, _ = commit(_Band(spec.dac_delta_min, spec.dac_delta_max), delta)
    captured = np.asarray(u) * on * spec.dac_eff * d * spec.dac_cap
    zero = captured * 0.0
    if spec.dac_kind == "dac1":
        heat, gas = zero, spec.dac_gas * captured
    else:
        heat, gas = spec.dac_heat * captured, zero
    out = DacOutput(captured, spec.dac_elec * captured, heat, gas, spec.dac_sorbent * captured)
    if np.ndim(captured) == 0:
        return DacOutput(*(float(x) for x in out))
    return out


def released(total_emit, pcc_cap, dac_cap):
    """CO2 escaping capture; negative values are net removals."""
    return total_emit - (pcc_cap + dac_cap)


def ledger(gt_co2: float, cfp_co2: float, gb_co2: float, pcc_cap: float, dac_cap: float) -> EmissionLedger:
    mes, total = mes_emissions(gt_co2, cfp_co2, gb_co2)
    return EmissionLedger(mes, total, pcc_cap, dac_cap, released(total, pcc_cap, dac_cap))


def cri(emitted: float, captured: float) -> tuple[float, float]:
    """CO2 released indicator as ``(fraction, percent)``."""
    if emitted <= 0:
        raise MetricError("CRI is undefined when no CO2 is emitted")
    frac = (emitted - captured) / emitted
    return frac, 100.0 * frac


@dataclass(frozen=True)
class Ccrr:
    ratio: float
    eq32: float
    net_negative: bool


def ccrr(captured: float, rel: float) -> Ccrr:
    """Captured-to-released ratio plus the literal ``(cap - rel) / cap`` companion.

    Non-positive release gives ``ratio = inf`` with ``net_negative`` set.
    """
    eq32 = (captured - rel) / captured if captured > 0 else float("nan")
    if rel <= 0:
        return Ccrr(math.inf, eq32, True)
    return Ccrr(captured / rel, eq32, False)
