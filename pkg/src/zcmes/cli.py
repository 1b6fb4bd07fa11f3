"""Command-line runner: ``zcmes <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Every output file is a deterministic function of the inputs and ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import data, plots
from .agents import TrainedAgent, preset, train
from .baseline import PsoConfig, greedy_schedule, pso_schedule
from .environment import (
    ACTION_NAMES,
    ConfigError,
    ScenarioConfig,
    ZcmesEnv,
    case_config,
    replay_actions,
    run_episode,
)
from .tuner import Choice, default_space, importance, tune

REPORT_VERSION = 1
HP_TABLE_FIELDS = (
    ("gamma", "gamma"),
    ("Learning rate", "lr"),
    ("Buffer size", "buffer_size"),
    ("Batch size", "batch_size"),
    ("Learning starts", "learning_starts"),
    ("Training frequency", "train_freq"),
    ("Tau (smooth factor)", "tau"),
    ("Noise type", "noise_type"),
    ("Entropy coefficient", "ent_coef"),
    ("Noise-std", "noise_std"),
    ("Net-arch", "net_arch"),
)
COMPARE_COLUMNS = ("op", "fuel", "emission", "cdr")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _clean(x):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def out_dir(args) -> Path:
    root = args.out or os.environ.get("ZCMES_OUT") or "zcmes_out"
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_config(args) -> tuple[ScenarioConfig, Path | None]:
    """Scenario from ``--config`` (optionally re-cased by ``--case``) or the shipped case file."""
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cfg = ScenarioConfig.load(path)
        if args.case is not None and args.case != cfg.case:
            cfg = cfg.with_case(args.case)
        return cfg, path.parent
    return case_config(args.case or 1), None


def make_env(args) -> ZcmesEnv:
    cfg, base = load_config(args)
    return ZcmesEnv(cfg, base_dir=base)


def parse_prices(text: str) -> list:
    try:
        return _parse_prices(text)
    except ValueError as exc:
        raise UsageError(f"bad price list {text!r}: {exc}") from None


def _parse_prices(text: str) -> list:
    text = text.strip()
    if not text:
        raise UsageError("empty price list")
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise UsageError("price range must be LO:HI:STEP with STEP > 0 and HI >= LO")
        lo, hi, step = parts
        if lo < 0:
            raise UsageError("carbon prices must be >= 0")
        prices = list(np.arange(lo, hi + 1e-9, step))
        if abs(prices[-1] - hi) > 1e-9:
            prices.append(hi)
        return [float(p) for p in prices]
    prices = [float(p) for p in text.split(",") if p.strip()]
    if not prices:
        raise UsageError("empty price list")
    if any(p < 0 for p in prices):
        raise UsageError("carbon prices must be >= 0")
    return prices


def episode_report(rep, cfg: ScenarioConfig, method: str, start: int, extra: dict | None = None) -> dict:
    body = rep.summary(cfg.cdr.variant)
    if cfg.cdr.variant == "none":
        body.pop("metrics")
    else:
        body["metrics"]["ccrr_label"] = "captured/released"
    return {"report_version": REPORT_VERSION, "method": method, "case": cfg.case, "variant": cfg.cdr.variant,
            "config_hash": cfg.content_hash(), "start_hour": start, "steps": len(rep.steps), **body, **(extra or {})}


def write_episode(out: Path, rep, cfg: ScenarioConfig, report: dict) -> None:
    _write_json(out / "report.json", report)
    keys = list(rep.steps[0]) if rep.steps else []
    rows = [[s[k] for k in keys] + list(a) for s, a in zip(rep.steps, rep.actions)]
    _write_csv(out / "dispatch.csv", keys + [f"a_{n}" for n in ACTION_NAMES], rows)
    hours = np.arange(len(rep.steps))
    col = {k: np.array([s[k] for s in rep.steps]) for k in keys}
    # demand = served + unserved (a negative residual is unserved load)
    el = col["el_served"] - np.minimum(col["res_e"], 0.0)
    plots.stacked_dispatch(out / "electricity.svg", hours,
                           {"RES": col["res_used"], "CFP": col["e_cfp"], "GT": col["e_gt"],
                            "BES": np.maximum(col["p_bes"], 0.0)}, el, "MW", "electricity supply")
    plots.stacked_dispatch(out / "heat.svg", hours,
                           {"CFP": col["h_cfp"], "GT": col["h_gt"], "GB": col["h_gb"], "WSHP": col["h_wshp"],
                            "TES": np.maximum(col["p_tes"], 0.0)},
                           col["hl_served"] - np.minimum(col["res_h"], 0.0), "MW", "heat supply")
    plots.soc(out / "soc.svg", hours, col["soc_b"], col["soc_h"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    out = out_dir(args)
    loads, weather = data.synth_scenario(args.seed, args.hours)
    data.write_loads(out / "load.csv", loads)
    data.write_weather(out / "weather.csv", weather)
    cfg, _ = load_config(args)
    cfg = dataclasses.replace(cfg, data={"source": "files", "load": "load.csv", "weather": "weather.csv"}, obs_bounds={})
    cfg.save(out / "scenario.json")
    print(f"wrote {args.hours} h of synthetic data (seed {args.seed}) to {out}")
    return 0


def cmd_ingest(args) -> int:
    out = out_dir(args)
    loads = data.load_timeseries(args.load, "load")
    weather = data.load_timeseries(args.weather, "weather")
    if [r.t for r in loads] != [w.t for w in weather]:
        raise data.SchemaError("load and weather files cover different hours")
    if len(loads) < 24:
        raise data.SchemaError("at least 24 hours of data are required")
    data.write_loads(out / "load.csv", loads)
    data.write_weather(out / "weather.csv", weather)
    cfg, _ = load_config(args)
    cfg = dataclasses.replace(cfg, data={"source": "files", "load": "load.csv", "weather": "weather.csv"}, obs_bounds={})
    env = ZcmesEnv(cfg, base_dir=out)
    cfg = env.cfg
    cfg.save(out / "scenario.json")
    s = env.series
    _write_csv(out / "series.csv", ("t", "pv_mw", "pw_mw", "el_mw", "hl_mw", "cl_mw"),
               [[r.t, float(s.pv[i]), float(s.pw[i]), float(s.el[i]), float(s.hl[i]), float(s.cl[i])]
                for i, r in enumerate(loads)])
    print(f"ingested {len(loads)} hours; scenario hash {cfg.content_hash()[:12]}")
    return 0


def cmd_train(args) -> int:
    env = make_env(args)
    cfg = env.cfg
    hp = preset(args.algo, args.preset)
    if args.steps < hp.learning_starts:
        hp = dataclasses.replace(hp, learning_starts=args.steps)
    out = out_dir(args)
    trained = train(args.algo, lambda: ZcmesEnv(cfg, series=env.series), hp, args.steps, args.seed)
    trained.save(out)
    cfg.save(out / "scenario.json")
    if trained.curve:
        plots.learning_curve(out / "curve.svg", [r["step"] for r in trained.curve], [r["return"] for r in trained.curve],
                             f"{args.algo.upper()} case {cfg.case}")
    print(f"trained {args.algo} for {args.steps} steps on case {cfg.case}; {len(trained.curve)} episodes -> {out}")
    return 0


def _baseline_schedule(env, method: str, args, start: int):
    if method == "pso":
        pso = PsoConfig(particles=args.particles, max_iters=args.iters, action_samples=args.samples, seed=args.seed)
        return pso_schedule(env, pso=pso, start_hour=start).actions
    return greedy_schedule(env, start_hour=start).actions


def cmd_evaluate(args) -> int:
    env = make_env(args)
    cfg = env.cfg
    start = cfg.eval_start if args.start is None else args.start
    if (args.agent is None) == (args.policy is None):
        raise UsageError("give exactly one of --agent DIR or --policy {pso,greedy}")
    if args.agent is not None:
        man_path = Path(args.agent) / "manifest.json"
        if not man_path.exists():
            raise UsageError(f"no agent manifest in {args.agent}")
        trained = TrainedAgent.load(args.agent)
        if trained.config_hash != cfg.content_hash():
            raise UsageError(f"agent was trained on scenario {trained.config_hash[:12]} but the evaluation scenario "
                             f"is {cfg.content_hash()[:12]}; pass the matching --config/--case")
        rep = run_episode(env, trained.policy(True), start)
        method = args.label or trained.algo
        extra = {"agent": {"algo": trained.algo, "seed": trained.seed}}
    else:
        actions = _baseline_schedule(env, args.policy, args, start)
        rep = replay_actions(env, actions, start)
        method = args.label or args.policy
        extra = {}
    out = out_dir(args)
    report = episode_report(rep, cfg, method, start, extra)
    write_episode(out, rep, cfg, report)
    c = report["cost"]
    print(f"{method}: total {c['total']:.2f} $, penalty {c['penalty']:.2f} $, released {rep.released:.2f} t")
    return 0


def cmd_compare(args) -> int:
    reports = []
    for d in args.runs:
        p = Path(d) / "report.json"
        if not p.exists():
            raise UsageError(f"no report.json in {d}")
        reports.append(json.loads(p.read_text(encoding="utf-8")))
    if len(reports) < 2:
        raise UsageError("compare needs at least two runs")
    hashes = {r["config_hash"] for r in reports}
    if len(hashes) != 1:
        raise UsageError("runs were produced on different scenarios: " + ", ".join(sorted(h[:12] for h in hashes)))
    labels = [r["method"] for r in reports]
    if args.baseline is None:
        base_i = labels.index("pso") if "pso" in labels else 0
    elif args.baseline in labels:
        base_i = labels.index(args.baseline)
    else:
        raise UsageError(f"baseline {args.baseline!r} not among runs {labels}")
    def pct(b, v):
        return 0.0 if b == 0 else 100.0 * (b - v) / b

    base = sum(reports[base_i]["cost"][k] for k in COMPARE_COLUMNS)
    base_obj = base + reports[base_i]["cost"]["penalty"]
    rows = []
    for r in reports:
        comps = [r["cost"][k] for k in COMPARE_COLUMNS]
        overall = sum(comps)
        obj = overall + r["cost"]["penalty"]
        rows.append([r["method"], *comps, overall, r["cost"]["penalty"], obj, pct(base, overall), pct(base_obj, obj)])
    header = ("method", *COMPARE_COLUMNS, "overall", "penalty", "objective", "improvement_pct", "improvement_obj_pct")
    out = out_dir(args)
    _write_csv(out / "compare.csv", header, rows)
    lines = [f"{'method':<12}" + "".join(f"{h:>16}" for h in header[1:])]
    for r in rows:
        lines.append(f"{r[0]:<12}" + "".join(f"{v:>16.2f}" for v in r[1:]))
    lines.append(f"baseline: {labels[base_i]}; scenario {next(iter(hashes))[:12]}")
    text = "\n".join(lines) + "\n"
    (out / "compare.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_sweep_carbon(args) -> int:
    prices = parse_prices(args.prices)
    env = make_env(args)
    cfg = env.cfg
    start = cfg.eval_start if args.start is None else args.start
    rows = []
    for price in prices:
        c = dataclasses.replace(cfg, tariffs=dataclasses.replace(cfg.tariffs, co2=price))
        e = ZcmesEnv(c, series=env.series)
        rep = replay_actions(e, _baseline_schedule(e, "pso", args, start), start)
        frac = rep.captured / rep.total_emit if rep.total_emit > 0 else 0.0
        rows.append([price, rep.captured, rep.released, rep.total_emit, frac, rep.cost.total, rep.objective])
        print(f"price {price:7.1f} $/t: captured {rep.captured:10.2f} t, released {rep.released:10.2f} t", flush=True)
    out = out_dir(args)
    _write_csv(out / "sweep.csv", ("price", "captured_t", "released_t", "total_emit_t", "captured_fraction",
                                   "cost_total", "objective"), rows)
    _write_json(out / "sweep.json", {"config_hash": cfg.content_hash(), "case": cfg.case, "start_hour": start,
                                     "prices": prices})
    plots.carbon_sweep(out / "sweep.svg", prices, [r[1] for r in rows], [r[2] for r in rows])
    return 0


def best_block(algo: str, hp, value: float | None) -> str:
    lines = [f"{'':<22}{algo.upper()}"]
    for label, key in HP_TABLE_FIELDS:
        v = getattr(hp, key)
        if key == "ent_coef" and algo != "sac" or key in ("noise_type", "noise_std") and algo != "td3":
            v = "-"
        elif key == "net_arch":
            v = "{" + ", ".join(str(w) for w in v) + "}"
        lines.append(f"{label:<22}{v}")
    lines.append(f"{'Mean-reward':<22}{'-' if value is None else f'{value:.4f}'}")
    return "\n".join(lines) + "\n"


def cmd_tune(args) -> int:
    env = make_env(args)
    cfg = env.cfg
    out = out_dir(args)
    study_path = Path(args.study) if args.study else out / "study.jsonl"
    space = default_space(args.algo)
    if args.steps < 1000:
        space["learning_starts"] = Choice(tuple(v for v in (100, 200, 500) if v <= args.steps) or (args.steps,))
    best, study = tune(args.algo, lambda: ZcmesEnv(cfg, series=env.series), space, budget=args.trials,
                       steps=args.steps, seed=args.seed, seeds=(args.seed,), study_path=study_path)
    text = best_block(args.algo, best, study.best_value)
    (out / "best_params.txt").write_text(text, encoding="utf-8")
    _write_json(out / "best_params.json", {"algo": args.algo, "config_hash": cfg.content_hash(),
                                           "hyperparams": best.to_dict(), "objective": study.best_value,
                                           "stopped_early": study.stopped_early})
    done = [r for r in study.records if r.complete]
    if len(done) >= 10:
        _write_csv(out / "importance.csv", ("hyperparameter", "score"), importance(study.records, space))
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config JSON (default: shipped file for --case)")
    common.add_argument("--case", type=int, choices=(1, 2, 3, 4), help="scenario case 1-4 (default 1)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory (default $ZCMES_OUT or ./zcmes_out)")

    pso = argparse.ArgumentParser(add_help=False)
    pso.add_argument("--samples", type=int, default=200, help="PSO action samples per slot")
    pso.add_argument("--particles", type=int, default=30)
    pso.add_argument("--iters", type=int, default=100)
    pso.add_argument("--start", type=int, help="episode start hour (default: config eval_start)")

    p = argparse.ArgumentParser(prog="zcmes", description="Multi-energy dispatch with carbon removal: simulate, train, compare.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic load/weather dataset and scenario")
    s.add_argument("--hours", type=int, default=168)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="validate load/weather CSVs and build a scenario on them")
    s.add_argument("--load", required=True)
    s.add_argument("--weather", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common], help="train a SAC or TD3 dispatch agent")
    s.add_argument("--algo", choices=("sac", "td3"), default="sac")
    s.add_argument("--steps", type=int, default=20_000)
    s.add_argument("--preset", choices=("desk", "published", "default"), default="desk")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common, pso], help="run one evaluation episode and write reports")
    s.add_argument("--agent", help="directory written by 'train'")
    s.add_argument("--policy", choices=("pso", "greedy"), help="evaluate a baseline instead of an agent")
    s.add_argument("--label", help="method name stored in the report")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="cost comparison table across evaluated runs")
    s.add_argument("runs", nargs="+", help="directories written by 'evaluate'")
    s.add_argument("--baseline", help="method label to measure improvement against (default pso or first run)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep-carbon", parents=[common, pso], help="PSO dispatch across carbon prices")
    s.add_argument("--prices", default="30:500:50", help="comma list or LO:HI:STEP (default 30:500:50)")
    s.set_defaults(func=cmd_sweep_carbon)

    s = sub.add_parser("tune", parents=[common], help="hyperparameter search with a resumable study file")
    s.add_argument("--algo", choices=("sac", "td3"), default="sac")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--steps", type=int, default=30_000)
    s.add_argument("--study", help="study file (default OUT/study.jsonl)")
    s.set_defaults(func=cmd_tune)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        for name in ("steps", "hours", "trials", "samples", "particles", "iters"):
            if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
                raise UsageError(f"--{name} must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError, data.DataError) as exc:
        print(f"zcmes {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"zcmes {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
