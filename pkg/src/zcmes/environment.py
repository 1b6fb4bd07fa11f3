"""Scenario configuration, action-to-dispatch resolution and the episodic MDP.

The dispatch core (:func:`evaluate_batch`) is written over a leading batch
axis. The environment calls it with a batch of one; the swarm baseline calls
it with every candidate action at once, so both see the same arithmetic.

Merit-order routing per carrier (producers pooled, sinks in priority):

* electricity: EL, WSHP, EC, PCC, DAC, BES charge
* heat: HL, AC, DAC, TES charge
* cooling: CL

A sink that cannot be fully supplied runs at the supplied fraction. What is
left over (or missing for the load) is the carrier residual.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import carbon, data, economics
from .carbon import CdrSpec
from .devices import (
    ConverterSpec,
    StorageSpec,
    StorageState,
    cfp_step,
    chiller_step,
    chp_gas_step,
    ramp_penalty,
    storage_power_limits,
    storage_step,
    thermal_step,
)
from .economics import CostBreakdown, PenaltyCoeffs, Tariffs

ACTION_NAMES = ("RES", "CFP", "GT", "GB", "WSHP", "BES", "TES", "EC", "AC", "PCC", "DAC")
ACTION_LOW = np.array([0, 0, 0, 0, 0, -1, -1, 0, 0, 0, 0], dtype=float)
ACTION_HIGH = np.ones(11)
RAMP_DEVICES = ("CFP", "GT", "GB", "WSHP", "EC", "AC")
CONVERTERS = RAMP_DEVICES
OBS_NAMES = ("pv", "pw", "el", "hl", "cl", "soc_b", "soc_h") + tuple(f"prev_{n}" for n in RAMP_DEVICES) + ("hod_sin", "hod_cos")
OBS_DIM = len(OBS_NAMES)
CASE_VARIANT = {1: "none", 2: "pcc_only", 3: "pcc_dac1", 4: "pcc_dac2"}


class ConfigError(ValueError):
    pass


class EnvStateError(RuntimeError):
    pass


def default_devices() -> dict:
    return {
        "CFP": ConverterSpec("CFP", 500.0, 0.40, eta_aux=0.30, heating_value=8.14, emission_factor=2.77, fuel="coal"),
        "GT": ConverterSpec("GT", 500.0, 0.35, eta_aux=0.40, heating_value=0.01, emission_factor=0.571, fuel="gas"),
        "GB": ConverterSpec("GB", 200.0, 0.90, heating_value=0.01, emission_factor=0.002, fuel="gas"),
        "WSHP": ConverterSpec("WSHP", 500.0, 3.5, fuel="electricity"),
        "EC": ConverterSpec("EC", 200.0, 4.0, fuel="electricity"),
        "AC": ConverterSpec("AC", 200.0, 0.7, fuel="heat"),
    }


def default_storage() -> dict:
    return {
        "BES": StorageSpec("BES", q_cap=400.0, p_rated=100.0, eta_ch=0.95, eta_dch=0.95),
        "TES": StorageSpec("TES", q_cap=800.0, p_rated=200.0, eta_ch=0.90, eta_dch=0.90),
    }


def default_cdr(variant: str) -> CdrSpec:
    if variant == "pcc_dac1":
        return CdrSpec(variant, dac_eff=0.85, dac_elec=0.366, dac_heat=0.0, dac_gas=5.25, dac_sorbent=53.68)
    return CdrSpec(variant)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full parameterization of one case study.

    ``data`` is either ``{"source": "synth", "seed": s, "hours": n}`` or
    ``{"source": "files", "load": path, "weather": path}``. ``obs_bounds``
    maps observation feature to ``[lo, hi]``; left empty it is filled from the
    data when the environment is built.
    """

    case: int = 1
    devices: dict = field(default_factory=default_devices)
    storage: dict = field(default_factory=default_storage)
    cdr: CdrSpec = field(default_factory=lambda: CdrSpec("none"))
    tariffs: Tariffs = field(default_factory=Tariffs)
    penalties: PenaltyCoeffs = field(default_factory=PenaltyCoeffs)
    renewable: data.RenewableSpec = field(default_factory=data.RenewableSpec)
    data: dict = field(default_factory=lambda: {"source": "synth", "seed": 0, "hours": 168, "peaks": dict(data.SYNTH_PEAKS)})
    episode_length: int = 24
    reward_scale: float = 1.0e5
    soc_init: float = 0.5
    plr_enabled: bool = True
    mask_truncation: bool = True
    eval_start: int = 0
    obs_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case not in CASE_VARIANT:
            raise ConfigError(f"case must be 1..4, got {self.case}")
        if self.cdr.variant != CASE_VARIANT[self.case]:
            raise ConfigError(f"case {self.case} requires CDR variant {CASE_VARIANT[self.case]!r}, got {self.cdr.variant!r}")
        missing = set(CONVERTERS) - set(self.devices)
        if missing:
            raise ConfigError(f"missing device specs: {sorted(missing)}")
        if set(self.storage) != {"BES", "TES"}:
            raise ConfigError("storage must define exactly BES and TES")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")
        if self.reward_scale <= 0:
            raise ConfigError("reward_scale must be > 0")

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "devices": {k: _spec_dict(v) for k, v in self.devices.items()},
            "storage": {k: asdict(v) for k, v in self.storage.items()},
            "cdr": asdict(self.cdr),
            "tariffs": asdict(self.tariffs),
            "penalties": asdict(self.penalties),
            "renewable": asdict(self.renewable),
            "data": dict(self.data),
            "episode_length": self.episode_length,
            "reward_scale": self.reward_scale,
            "soc_init": self.soc_init,
            "plr_enabled": self.plr_enabled,
            "mask_truncation": self.mask_truncation,
            "eval_start": self.eval_start,
            "obs_bounds": {k: list(v) for k, v in self.obs_bounds.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = dict(d)
            if "devices" in d:
                kw["devices"] = {k: ConverterSpec(**v) for k, v in d["devices"].items()}
            if "storage" in d:
                kw["storage"] = {k: StorageSpec(**v) for k, v in d["storage"].items()}
            if "cdr" in d:
                kw["cdr"] = CdrSpec(**d["cdr"])
            elif "case" in d:
                kw["cdr"] = default_cdr(CASE_VARIANT.get(d["case"], "none"))
            if "tariffs" in d:
                kw["tariffs"] = Tariffs(**d["tariffs"])
            if "penalties" in d:
                kw["penalties"] = PenaltyCoeffs(**d["penalties"])
            if "renewable" in d:
                kw["renewable"] = data.RenewableSpec(**d["renewable"])
            if "obs_bounds" in d:
                kw["obs_bounds"] = {k: tuple(v) for k, v in d["obs_bounds"].items()}
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def content_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_case(self, case: int) -> "ScenarioConfig":
        """Same devices and tariffs, CDR variant switched to ``case``."""
        variant = CASE_VARIANT[case]
        cdr = self.cdr if self.cdr.variant == variant else default_cdr(variant)
        return replace(self, case=case, cdr=cdr)


def _spec_dict(spec: ConverterSpec) -> dict:
    d = asdict(spec)
    d["plr_coeffs"] = list(d["plr_coeffs"])
    d["aux_plr_coeffs"] = list(d["aux_plr_coeffs"])
    return d


def default_config(case: int = 1, **overrides) -> ScenarioConfig:
    """Built-in defaults for a case (the shipped JSON files are dumps of these)."""
    if case not in CASE_VARIANT:
        raise ConfigError(f"case must be 1..4, got {case}")
    return ScenarioConfig(case=case, cdr=default_cdr(CASE_VARIANT[case]), **overrides)


def case_config(case: int) -> ScenarioConfig:
    """Load the shipped scenario file for ``case``."""
    if case not in CASE_VARIANT:
        raise ConfigError(f"case must be 1..4, got {case}")
    text = resources.files("zcmes").joinpath("scenarios", f"case{case}.json").read_text(encoding="utf-8")
    return ScenarioConfig.from_json(text)


# ---------------------------------------------------------------------------
# Exogenous series


@dataclass(frozen=True)
class Series:
    """Hourly exogenous inputs, all in MW."""

    pv: np.ndarray
    pw: np.ndarray
    el: np.ndarray
    hl: np.ndarray
    cl: np.ndarray

    def __len__(self):
        return len(self.el)

    def at(self, hour: int):
        h = hour % len(self)
        return self.pv[h], self.pw[h], self.el[h], self.hl[h], self.cl[h]


def load_series(cfg: ScenarioConfig, base_dir=None) -> Series:
    src = cfg.data.get("source", "synth")
    if src == "synth":
        loads, weather = data.synth_scenario(int(cfg.data.get("seed", 0)), int(cfg.data.get("hours", 168)),
                                             cfg.data.get("peaks"))
    elif src == "files":
        base = Path(base_dir or ".")
        loads = data.load_timeseries(base / cfg.data["load"], "load")
        weather = data.load_timeseries(base / cfg.data["weather"], "weather")
        if [r.t for r in loads] != [w.t for w in weather]:
            raise data.SchemaError("load and weather files cover different hours")
    else:
        raise ConfigError(f"unknown data source {src!r}")
    pv, pw = data.renewable_series(weather, cfg.renewable)
    return Series(pv, pw, np.array([r.el for r in loads]), np.array([r.hl for r in loads]),
                  np.array([r.cl for r in loads]))


def compute_obs_bounds(cfg: ScenarioConfig, series: Series) -> dict:
    b = {}
    for name in ("pv", "pw", "el", "hl", "cl"):
        x = getattr(series, name)
        b[name] = (float(x.min()), float(max(x.max(), x.min() + 1e-6)))
    b["soc_b"] = (cfg.storage["BES"].soc_floor, cfg.storage["BES"].soc_ceiling)
    b["soc_h"] = (cfg.storage["TES"].soc_floor, cfg.storage["TES"].soc_ceiling)
    for n in RAMP_DEVICES:
        b[f"prev_{n}"] = (0.0, cfg.devices[n].p_rated)
    b["hod_sin"] = (-1.0, 1.0)
    b["hod_cos"] = (-1.0, 1.0)
    return b


# ---------------------------------------------------------------------------
# Dispatch


@dataclass
class Dispatch:
    """Resolved flows for one step (floats) or a batch of candidates (arrays).

    Electric quantities MW, heat MW, cooling MW, fuels in m3 (gas) and t
    (coal), CO2 in t, solvent/sorbent in kg. ``p_bes``/``p_tes`` follow the
    storage sign convention (positive discharges).
    """

    res_avail: object
    res_used: object
    e_cfp: object
    h_cfp: object
    coal: object
    e_gt: object
    h_gt: object
    gas_gt: object
    h_gb: object
    gas_gb: object
    h_wshp: object
    e_wshp: object
    c_ec: object
    e_ec: object
    c_ac: object
    h_ac: object
    p_bes: object
    p_tes: object
    soc_b: object
    soc_h: object
    el_served: object
    hl_served: object
    pcc_captured: object
    pcc_elec: object
    pcc_solvent: object
    dac_captured: object
    dac_elec: object
    dac_heat: object
    dac_gas: object
    dac_sorbent: object
    co2_gt: object
    co2_cfp: object
    co2_gb: object
    mes_emit: object
    total_emit: object
    released: object
    res_e: object
    res_h: object
    res_c: object
    pen_balance: object
    pen_ramp: object
    pen_soc: object
    pen_release: object
    band_violations: object

    def outputs(self):
        """Ramp-tracked outputs in :data:`RAMP_DEVICES` order."""
        return np.stack([self.e_cfp, self.e_gt, self.h_gb, self.h_wshp, self.c_ec, self.c_ac], axis=-1)

    def row(self, i: int | None = None) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            v = np.asarray(v)
            out[f.name] = float(v if i is None or v.ndim == 0 else v[i])
        return out


@dataclass
class BatchCost:
    op: np.ndarray
    fuel: np.ndarray
    cdr: np.ndarray
    emission: np.ndarray
    penalty: np.ndarray

    @property
    def total(self):
        return self.op + self.fuel + self.cdr + self.emission

    @property
    def objective(self):
        return self.total + self.penalty

    def breakdown(self, i: int = 0) -> CostBreakdown:
        return CostBreakdown(*(float(np.asarray(getattr(self, n)).reshape(-1)[i])
                               for n in ("op", "fuel", "cdr", "emission", "penalty")))


def clip_action(action):
    return np.clip(np.asarray(action, dtype=float), ACTION_LOW, ACTION_HIGH)


def _serve(avail, demand):
    """Fraction of ``demand`` that ``avail`` covers, and what is left."""
    with np.errstate(over="ignore"):
        frac = np.where(demand > 0, np.clip(avail / np.where(demand > 0, demand, 1.0), 0.0, 1.0), 1.0)
    return frac, avail - frac * demand


def evaluate_batch(cfg: ScenarioConfig, action, exo, soc_b, soc_h, prev) -> tuple[Dispatch, BatchCost]:
    """Resolve and price a batch of actions.

    ``action`` has shape ``(N, 11)``; ``exo`` is ``(pv, pw, el, hl, cl)``;
    ``soc_b``, ``soc_h`` and ``prev`` (``(N, 6)``) broadcast against the batch.
    """
    a = clip_action(action)
    a = np.atleast_2d(a)
    d_res, d_cfp, d_gt, d_gb, d_hp, d_bes, d_tes, d_ec, d_ac, d_pcc, d_dac = a.T
    pv, pw, el, hl, cl = (np.asarray(x, dtype=float) for x in exo)
    dev, sto, cdr, plr = cfg.devices, cfg.storage, cfg.cdr, cfg.plr_enabled
    bes, tes = sto["BES"], sto["TES"]
    soc_b = np.broadcast_to(np.asarray(soc_b, dtype=float), d_res.shape)
    soc_h = np.broadcast_to(np.asarray(soc_h, dtype=float), d_res.shape)

    res_avail = pv + pw
    res = d_res * res_avail
    cfp = cfp_step(dev["CFP"], d_cfp, plr)
    gt = chp_gas_step(dev["GT"], d_gt, plr)
    gb = thermal_step(dev["GB"], d_gb, "GB", plr)
    hp = thermal_step(dev["WSHP"], d_hp, "WSHP", plr)
    ec = chiller_step(dev["EC"], d_ec, "EC", plr)
    ac = chiller_step(dev["AC"], d_ac, "AC", plr)
    band_bad = sum(~np.asarray(x.band_ok) for x in (cfp, gt, gb, hp, ec, ac))

    b_dis_max, b_ch_max = storage_power_limits(soc_b, bes)
    t_dis_max, t_ch_max = storage_power_limits(soc_h, tes)
    pb = d_bes * bes.p_rated
    pt = d_tes * tes.p_rated
    b_dis = np.clip(pb, 0.0, b_dis_max)
    b_ch_req = np.clip(-pb, 0.0, b_ch_max)
    t_dis = np.clip(pt, 0.0, t_dis_max)
    t_ch_req = np.clip(-pt, 0.0, t_ch_max)

    mes, total = carbon.mes_emissions(gt.co2, cfp.co2, gb.co2)
    pcc = carbon.pcc_step(cdr, d_pcc)
    # PCC cannot process more CO2 than the flue gas carries.
    with np.errstate(over="ignore"):
        flue = np.where(pcc.captured > 0,
                        np.minimum(1.0, cdr.pcc_eff * mes / np.where(pcc.captured > 0, pcc.captured, 1.0)), 0.0)
    pcc_e_req = pcc.elec * flue
    dac = carbon.dac_step(cdr, d_dac)

    # electricity
    e_supply = res + cfp.e_out + gt.e_out + b_dis
    el_served = np.minimum(e_supply, el)
    rem = e_supply - el_served
    f_hp, rem = _serve(rem, hp.e_in)
    f_ec, rem = _serve(rem, ec.e_in)
    f_pcc, rem = _serve(rem, pcc_e_req)

    # heat
    h_wshp = hp.h_out * f_hp
    h_supply = cfp.h_out + gt.h_out + gb.h_out + h_wshp + t_dis
    hl_served = np.minimum(h_supply, hl)
    remh = h_supply - hl_served
    f_ac, remh = _serve(remh, ac.h_in)

    fe, _ = _serve(rem, dac.elec)
    fh, _ = _serve(remh, dac.heat)
    f_dac = np.minimum(fe, fh)
    rem = rem - f_dac * dac.elec
    remh = remh - f_dac * dac.heat

    b_ch = np.minimum(b_ch_req, np.maximum(rem, 0.0))
    rem = rem - b_ch
    t_ch = np.minimum(t_ch_req, np.maximum(remh, 0.0))
    remh = remh - t_ch

    res_e = rem + (el_served - el)
    res_h = remh + (hl_served - hl)
    c_ec = ec.c_out * f_ec
    c_ac = ac.c_out * f_ac
    res_c = c_ec + c_ac - cl

    p_bes = b_dis - b_ch
    p_tes = t_dis - t_ch
    sb, _, pen_b = storage_step(StorageState(soc_b), bes, p_bes / bes.p_rated)
    sh, _, pen_h = storage_step(StorageState(soc_h), tes, p_tes / tes.p_rated)

    k_pcc = flue * f_pcc
    pcc_t, pcc_e, pcc_kg = pcc.captured * k_pcc, pcc.elec * k_pcc, pcc.solvent * k_pcc
    dac_out = tuple(np.asarray(x) * f_dac for x in dac)
    rel = carbon.released(total, pcc_t, dac_out[0])

    p = cfg.penalties
    outs = np.stack([cfp.e_out, gt.e_out, gb.h_out, h_wshp, c_ec, c_ac], axis=-1)
    prev = np.broadcast_to(np.asarray(prev, dtype=float), outs.shape)
    pen_ramp = sum(ramp_penalty(prev[:, i], outs[:, i], dev[n], p.omega) for i, n in enumerate(RAMP_DEVICES))
    pen_bal = economics.balance_penalties(res_e, res_h, res_c, p)
    pen_rel = economics.release_penalty(rel, total, p, active=cdr.has_pcc)
    pen_soc = np.asarray(pen_b) + np.asarray(pen_h)

    d = Dispatch(
        res_avail=np.broadcast_to(res_avail, res.shape), res_used=res,
        e_cfp=cfp.e_out, h_cfp=cfp.h_out, coal=cfp.fuel_in,
        e_gt=gt.e_out, h_gt=gt.h_out, gas_gt=gt.fuel_in,
        h_gb=gb.h_out, gas_gb=gb.fuel_in,
        h_wshp=h_wshp, e_wshp=hp.e_in * f_hp,
        c_ec=c_ec, e_ec=ec.e_in * f_ec, c_ac=c_ac, h_ac=ac.h_in * f_ac,
        p_bes=p_bes, p_tes=p_tes, soc_b=np.asarray(sb.soc), soc_h=np.asarray(sh.soc),
        el_served=el_served, hl_served=hl_served,
        pcc_captured=pcc_t, pcc_elec=pcc_e, pcc_solvent=pcc_kg,
        dac_captured=dac_out[0], dac_elec=dac_out[1], dac_heat=dac_out[2], dac_gas=dac_out[3], dac_sorbent=dac_out[4],
        co2_gt=gt.co2, co2_cfp=cfp.co2, co2_gb=gb.co2, mes_emit=mes, total_emit=total, released=rel,
        res_e=res_e, res_h=res_h, res_c=res_c,
        pen_balance=pen_bal, pen_ramp=pen_ramp, pen_soc=pen_soc, pen_release=pen_rel,
        band_violations=band_bad,
    )
    t = cfg.tariffs
    cost = BatchCost(
        op=economics.operation_cost(d, t),
        fuel=economics.fuel_cost(d.gas_gt, d.gas_gb, d.coal, t),
        cdr=economics.cdr_cost((pcc_t, pcc_e, pcc_kg), dac_out, t, cdr.dac_kind),
        emission=np.asarray(economics.emission_cost(rel, t)),
        penalty=pen_bal + pen_ramp + pen_soc + pen_rel,
    )
    return d, cost


def resolve_dispatch(action, obs: "Observation", cfg: ScenarioConfig) -> Dispatch:
    """Single-step dispatch for an observation (batch of one squeezed to floats)."""
    d, _ = evaluate_batch(cfg, np.asarray(action)[None, :], (obs.pv, obs.pw, obs.el, obs.hl, obs.cl),
                          obs.soc_b, obs.soc_h, np.asarray(obs.prev_outputs)[None, :])
    return Dispatch(**d.row(0))


# ---------------------------------------------------------------------------
# Environment


@dataclass(frozen=True)
class Observation:
    pv: float
    pw: float
    el: float
    hl: float
    cl: float
    soc_b: float
    soc_h: float
    prev_outputs: tuple
    hour: int = 0

    def raw(self) -> np.ndarray:
        hod = 2 * np.pi * (self.hour % 24) / 24.0
        return np.array([self.pv, self.pw, self.el, self.hl, self.cl, self.soc_b, self.soc_h,
                         *self.prev_outputs, np.sin(hod), np.cos(hod)], dtype=float)


@dataclass
class StepResult:
    obs: Observation
    vector: np.ndarray
    reward: float
    raw_reward: float
    done: bool
    info: dict


class ZcmesEnv:
    """Episodic dispatch environment. Transitions are deterministic."""

    def __init__(self, cfg: ScenarioConfig, series: Series | None = None, base_dir=None):
        self.series = series if series is not None else load_series(cfg, base_dir)
        if not cfg.obs_bounds:
            cfg = replace(cfg, obs_bounds=compute_obs_bounds(cfg, self.series))
        self.cfg = cfg
        lo = np.array([cfg.obs_bounds[n][0] for n in OBS_NAMES])
        hi = np.array([cfg.obs_bounds[n][1] for n in OBS_NAMES])
        self._lo, self._span = lo, np.where(hi > lo, hi - lo, 1.0)
        self._rr = 0
        self._t = None
        self._done = True

    @property
    def obs_dim(self) -> int:
        return OBS_DIM

    @property
    def act_dim(self) -> int:
        return len(ACTION_NAMES)

    def train_starts(self) -> list:
        n_days = len(self.series) // 24
        return [24 * k for k in range(n_days) if 24 * k + self.cfg.episode_length <= len(self.series)]

    def normalize(self, obs: Observation) -> np.ndarray:
        return np.clip(2.0 * (obs.raw() - self._lo) / self._span - 1.0, -1.0, 1.0)

    def _obs(self) -> Observation:
        pv, pw, el, hl, cl = self.series.at(self._hour)
        return Observation(float(pv), float(pw), float(el), float(hl), float(cl), float(self._soc_b),
                           float(self._soc_h), tuple(float(x) for x in self._prev), self._hour)

    def reset(self, start_hour: int | None = None) -> Observation:
        """Start an episode. ``None`` cycles round-robin through the training days."""
        if start_hour is None:
            starts = self.train_starts()
            start_hour = starts[self._rr % len(starts)]
            self._rr += 1
        if not 0 <= start_hour or start_hour + self.cfg.episode_length > len(self.series):
            raise ValueError(f"start_hour {start_hour} out of range for horizon {len(self.series)}")
        self._start = start_hour
        self._hour = start_hour
        self._t = 0
        self._soc_b = self.cfg.soc_init
        self._soc_h = self.cfg.soc_init
        self._prev = np.zeros(len(RAMP_DEVICES))
        self._done = False
        return self._obs()

    def state(self):
        return (self._soc_b, self._soc_h, self._prev.copy())

    def step(self, action) -> StepResult:
        if self._done:
            raise EnvStateError("step() called on a finished episode; call reset()")
        obs = self._obs()
        d, cost = evaluate_batch(self.cfg, np.asarray(action, dtype=float)[None, :],
                                 (obs.pv, obs.pw, obs.el, obs.hl, obs.cl), self._soc_b, self._soc_h, self._prev[None, :])
        disp = Dispatch(**d.row(0))
        cb = cost.breakdown(0)
        self._soc_b, self._soc_h = disp.soc_b, disp.soc_h
        self._prev = d.outputs()[0].astype(float)
        self._t += 1
        self._hour += 1
        self._done = self._t >= self.cfg.episode_length
        nxt = self._obs()
        raw = economics.step_reward(cb)
        info = {
            "cost": cb,
            "ledger": carbon.EmissionLedger(disp.mes_emit, disp.total_emit, disp.pcc_captured, disp.dac_captured, disp.released),
            "dispatch": disp,
            "hour": obs.hour,
            "band_violations": int(disp.band_violations),
        }
        return StepResult(nxt, self.normalize(nxt), raw / self.cfg.reward_scale, raw, self._done, info)


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class EpisodeReport:
    cost: CostBreakdown
    mes_emit: float
    total_emit: float
    pcc_captured: float
    dac_captured: float
    released: float
    raw_return: float
    steps: list
    actions: list

    @property
    def captured(self) -> float:
        return self.pcc_captured + self.dac_captured

    @property
    def objective(self) -> float:
        return self.cost.total + self.cost.penalty

    def metrics(self, variant: str) -> dict:
        """CRI/CCRR for capturing variants; empty for the no-CDR case."""
        if variant == "none" or self.total_emit <= 0:
            return {}
        frac, pct = carbon.cri(self.total_emit, self.captured)
        c = carbon.ccrr(self.captured, self.released)
        return {"cri": frac, "cri_percent": pct, "ccrr": c.ratio, "ccrr_eq32": c.eq32, "net_negative": c.net_negative}

    def max_abs_residual(self) -> float:
        if not self.steps:
            return 0.0
        return max(max(abs(s["res_e"]), abs(s["res_h"]), abs(s["res_c"])) for s in self.steps)

    def summary(self, variant: str) -> dict:
        return {
            "cost": self.cost.as_dict(),
            "objective": self.objective,
            "raw_return": self.raw_return,
            "ledger": {"mes_emit": self.mes_emit, "total_emit": self.total_emit, "pcc_captured": self.pcc_captured,
                       "dac_captured": self.dac_captured, "released": self.released},
            "metrics": self.metrics(variant),
            "max_abs_residual": self.max_abs_residual(),
        }


def run_episode(env: ZcmesEnv, policy: Callable, start_hour: int | None = None) -> EpisodeReport:
    """Roll ``policy(obs_vector, obs) -> action`` for one episode."""
    obs = env.reset(env.cfg.eval_start if start_hour is None else start_hour)
    vec = env.normalize(obs)
    total = CostBreakdown()
    led = np.zeros(5)
    steps, actions, ret = [], [], 0.0
    done = False
    while not done:
        a = clip_action(policy(vec, obs))
        r = env.step(a)
        total = total + r.info["cost"]
        L = r.info["ledger"]
        led += (L.mes_emit, L.total_emit, L.pcc_cap, L.dac_cap, L.released)
        row = {"hour": r.info["hour"], **r.info["dispatch"].row(), **{f"cost_{k}": v for k, v in r.info["cost"].as_dict().items()}}
        steps.append(row)
        actions.append(a.tolist())
        ret += r.raw_reward
        obs, vec, done = r.obs, r.vector, r.done
    return EpisodeReport(total, *led.tolist(), ret, steps, actions)


def rollout(policy: Callable, cfg_or_env, episodes: int = 1, start_hours=None) -> list:
    env = cfg_or_env if isinstance(cfg_or_env, ZcmesEnv) else ZcmesEnv(cfg_or_env)
    if start_hours is None:
        start_hours = [env.cfg.eval_start] * episodes
    return [run_episode(env, policy, s) for s in start_hours[:episodes]]


def replay_actions(env: ZcmesEnv, actions, start_hour: int | None = None) -> EpisodeReport:
    """Re-simulate a fixed action sequence."""
    it = iter(actions)
    return run_episode(env, lambda v, o: next(it), start_hour)
