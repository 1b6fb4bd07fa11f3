"""Step cost assembly, constraint penalties and the reward.

Functions here read flows off a resolved dispatch (see
:class:`zcmes.environment.Dispatch`) by attribute name, so they work equally on
a single step (floats) and on a batch of candidate actions (arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Default operation tariffs in $/MWh of output (storage: of |power|).
DEFAULT_OP = {
    "RES": 6.92,
    "CFP": 4.80,
    "GT": 2.70,
    "GB": 2.00,
    "WSHP": 1.70,
    "EC": 1.50,
    "AC": 1.50,
    "BES": 1.00,
    "TES": 1.00,
}


@dataclass(frozen=True)
class Tariffs:
    """Prices. ``gas`` is $/m3, ``coal`` $/t, capture/storage $/tCO2,
    ``solvent`` (MEA, used by PCC and DAC1) and ``sorbent`` (DAC2) $/kg,
    ``co2`` is the carbon price in $/t. ``gas_lhv`` converts DAC1 gas from GJ
    to m3."""

    op: dict = field(default_factory=lambda: dict(DEFAULT_OP))
    gas: float = 0.14
    coal: float = 60.0
    cdr_capture: float = 50.0
    cdr_storage: float = 10.0
    solvent: float = 3.0
    sorbent: float = 10.0
    co2: float = 40.0
    gas_lhv: float = 0.01  # MWh/m3
    carbon_credit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "op", {**DEFAULT_OP, **dict(self.op)})
        for k, v in self.op.items():
            if v < 0:
                raise ValueError(f"operation tariff for {k} must be >= 0")
        for name in ("gas", "coal", "cdr_capture", "cdr_storage", "solvent", "sorbent", "co2"):
            if getattr(self, name) < 0:
                raise ValueError(f"tariff {name} must be >= 0")
        if self.gas_lhv <= 0:
            raise ValueError("gas_lhv must be > 0")

    def gas_m3_from_gj(self, gj):
        return gj / (3.6 * self.gas_lhv)


@dataclass(frozen=True)
class PenaltyCoeffs:
    """Balance (``$/MW^2``), ramp (``$/MW``) and released-CO2 cap penalties."""

    theta_el: float = 100.0
    theta_hl: float = 100.0
    theta_cl: float = 100.0
    omega: float = 10.0
    psi_rel: float = 2.0e5
    release_cap: float = 0.20

    def __post_init__(self):
        for name in ("theta_el", "theta_hl", "theta_cl", "omega", "psi_rel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.release_cap <= 1.0:
            raise ValueError("release_cap must be in [0, 1]")


@dataclass
class CostBreakdown:
    op: float = 0.0
    fuel: float = 0.0
    cdr: float = 0.0
    emission: float = 0.0
    penalty: float = 0.0

    @property
    def total(self):
        return self.op + self.fuel + self.cdr + self.emission

    def as_dict(self) -> dict:
        return {"op": self.op, "fuel": self.fuel, "cdr": self.cdr, "emission": self.emission,
                "total": self.total, "penalty": self.penalty}

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(self.op + other.op, self.fuel + other.fuel, self.cdr + other.cdr,
                             self.emission + other.emission, self.penalty + other.penalty)


def operation_cost(d, tariffs: Tariffs):
    op = tariffs.op
    return (
        op["RES"] * d.res_used
        + op["CFP"] * d.e_cfp
        + op["GT"] * d.e_gt
        + op["WSHP"] * d.h_wshp
        + op["GB"] * d.h_gb
        + op["EC"] * d.c_ec
        + op["AC"] * d.c_ac
        + op["BES"] * np.abs(d.p_bes)
        + op["TES"] * np.abs(d.p_tes)
    )


def fuel_cost(gas_chp, gas_gb, coal, tariffs: Tariffs):
    """Gas for the turbine and boiler plus coal; DAC1 gas is billed as CDR cost."""
    return tariffs.gas * (gas_chp + gas_gb) + tariffs.coal * coal


def cdr_cost(pcc_out, dac_out, tariffs: Tariffs, dac_kind: str | None = None):
    """Capture plus storage per ton, solvent/sorbent per kg, DAC1 regeneration gas.

    ``pcc_out`` is ``(captured, elec, solvent_kg)`` and ``dac_out`` is
    ``(captured, elec, heat, gas_gj, sorbent_kg)``. DAC1 consumes MEA solvent,
    DAC2 solid sorbent.
    """
    pcc_t, _, pcc_kg = pcc_out
    dac_t, _, _, dac_gj, dac_kg = dac_out
    per_ton = tariffs.cdr_capture + tariffs.cdr_storage
    dac_price = tariffs.solvent if dac_kind == "dac1" else tariffs.sorbent
    return (
        per_ton * (pcc_t + dac_t)
        + tariffs.solvent * pcc_kg
        + dac_price * dac_kg
        + tariffs.gas * tariffs.gas_m3_from_gj(dac_gj)
    )


def emission_cost(released, tariffs: Tariffs, credit: bool | None = None):
    """Carbon price on released CO2. Net removal pays only in credit mode."""
    credit = tariffs.carbon_credit if credit is None else credit
    rel = np.asarray(released, dtype=float)
    out = tariffs.co2 * (rel if credit else np.maximum(rel, 0.0))
    return float(out) if out.ndim == 0 else out


def balance_penalties(res_e, res_h, res_c, coeffs: PenaltyCoeffs):
    """Quadratic penalties on the per-carrier residuals (supply minus demand)."""
    return coeffs.theta_el * res_e**2 + coeffs.theta_hl * res_h**2 + coeffs.theta_cl * res_c**2


def release_penalty(released, total_emit, coeffs: PenaltyCoeffs, active: bool = True):
    """Exponential penalty once released CO2 exceeds ``release_cap * total_emit``."""
    rel = np.asarray(released, dtype=float)
    tot = np.asarray(total_emit, dtype=float)
    if not active:
        out = np.zeros(np.broadcast(rel, tot).shape)
    else:
        excess = rel - coeffs.release_cap * tot
        safe = np.where(tot > 0, tot, 1.0)
        out = np.where((excess > 0) & (tot > 0), coeffs.psi_rel * np.exp(excess / safe), 0.0)
    return float(out) if out.ndim == 0 else out


def step_reward(cost: CostBreakdown, scale: float = 1.0):
    """``-(F + penalty)``; pass the config scale to get the agent-facing value."""
    return -(cost.total + cost.penalty) / scale
