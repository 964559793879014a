"""Command-line front end.

Subcommands write CSV tables.  With ``--out DIR`` every table goes to a file
in DIR next to a ``manifest.json`` that reproduces the run when passed back
as ``--config``; without it the main table is printed to stdout.

Exit codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .analytic import (
    ErrorFamily,
    TimingErrorModel,
    TrafficModel,
    exact_series_throughput,
    grid_search_guard,
    guard_objective,
    inter_slot_probs,
    optimal_guard,
    plan_slots,
    throughput_inband,
    throughput_oob,
    throughput_ratio_closed_form,
)
from .config import (
    SweepPoint,
    budget_from,
    error_model_from,
    inband_guard_s,
    load_config,
    phy_from,
    plan_from,
    seed_list,
    sim_config_from,
    sweep_points,
)
from .errors import BracketFallbackWarning, ConfigError, DutyCycleError, SloraError
from .metrics import Z50, SimReport, summarize
from .sim.engine import MacMode, run_simulation

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CSV_SCHEMA_VERSION = 1


class Table:
    def __init__(self, name: str, columns: Sequence[str]):
        self.name = name
        self.columns = list(columns)
        self.rows: list[list] = []

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(list(values))

    def render(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow(_fmt(v) for v in row)
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def emit(args, cfg: dict, tables: list[Table], runs: Iterable[dict] = ()) -> None:
    if args.out is None:
        sys.stdout.write(tables[0].render())
        return
    out = Path(args.out)
    for t in tables:
        write_atomic(out / f"{t.name}.csv", t.render())
    manifest = {
        "tool": "slora",
        "tool_version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "command": args.command,
        "config_path": str(args.config) if args.config else None,
        "config": cfg,
        "config_hash": canonical_hash(cfg),
        "seeds": seed_list(cfg),
        "output_dir": str(out),
        "outputs": [f"{t.name}.csv" for t in tables],
        "runs": list(runs),
    }
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(tables)} table(s) and manifest.json to {out}", file=sys.stderr)


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args, cfg: dict) -> list[Table]:
    phy = phy_from(cfg)
    toa = phy.toa
    model = error_model_from(cfg)
    plan = plan_from(cfg, phy, model)
    p_l, p_r = inter_slot_probs(model, plan.guard_time_s, phy.t_c)
    n = cfg["traffic"]["n_devices"]
    t_i = cfg["inband"]["t_sync_s"]
    tg_i = inband_guard_s(cfg)
    g_s = 2.0 * n * toa / t_i

    curves = Table("analyze", ["g", "s_oob", "s_oob_exact", "s_inband", "eta_direct", "eta_closed_form"])
    for g in cfg["analyze"]["offered_load"]:
        s_oob = throughput_oob(g, plan, toa, p_l, p_r)
        s_exact = exact_series_throughput(
            g, plan.t_sync_s, toa, plan.guard_time_s, plan.phase_guard_s, plan.slot_count, p_l, p_r
        )
        # the in-band curve takes the sync load at face value; duty-cycle feasibility is the sweep's job
        s_ib = throughput_inband(g, tg_i, toa, sync_load=g_s)
        eta = s_ib / s_oob if s_oob > 0 else None
        eta_cf = throughput_ratio_closed_form(n, n * toa / g, plan.guard_time_s, tg_i, t_i, toa) if g > 0 else None
        curves.add(g, s_oob, s_exact, s_ib, eta, eta_cf)

    a = cfg["analyze"]
    sweep = Table(
        "eta_sweep",
        ["sf", "t_sync_inband_s", "xbar_inband_s", "g", "g_s", "s_oob", "s_inband", "eta_direct", "eta_closed_form"],
    )
    skew = cfg["plan"]["clock_skew_ppm"] * 1e-6
    t_o = cfg["plan"]["t_sync_s"]
    for sf in a["sfs"]:
        p = phy_from(cfg, sf)
        base = TrafficModel(a["n_devices"], a["mean_interarrival_s"], p.toa, cfg["traffic"]["duty_cycle"])
        plan_o = plan_slots(t_o, p.toa, skew * t_o, 0.0, cfg["plan"]["clock_skew_ppm"])
        for ti in a["t_sync_inband_s"]:
            try:
                load_i = base.inband_capped(ti)
            except DutyCycleError:
                continue
            tg_ib = inband_guard_s(cfg, ti)
            s_oob = throughput_oob(base, plan_o, p.toa)
            s_ib = throughput_inband(load_i, tg_ib, p.toa)
            eta_cf = throughput_ratio_closed_form(
                base.n_devices, load_i.mean_interarrival_s, plan_o.guard_time_s, tg_ib, ti, p.toa
            )
            sweep.add(sf, ti, load_i.mean_interarrival_s, load_i.offered_load, load_i.sync_load_inband,
                      s_oob, s_ib, s_ib / s_oob, eta_cf)
    return [curves, sweep]


# ---------------------------------------------------------------------------
# guard


def cmd_guard(args, cfg: dict) -> list[Table]:
    g = cfg["guard"]
    cols = ["sigma_s", "family", "sf", "toa_s", "t_c_s", "tg_opt_s"]
    if args.verify:
        cols += ["tg_oracle_s", "delta_s"]
    table = Table("guard", cols)
    t_sync = cfg["plan"]["t_sync_s"]
    phase_guard = 2.0 * cfg["plan"]["periodicity_jitter_s"]
    for sf in g["sfs"]:
        p = phy_from(cfg, sf)
        for fam in g["families"]:
            for sigma in g["sigma_s"]:
                model = TimingErrorModel(fam, sigma)
                tg = optimal_guard(model, p.toa, p.t_c)
                row = [sigma, fam, sf, p.toa, p.t_c, tg]
                if args.verify:
                    oracle = _guard_oracle(model, p.toa, p.t_c, t_sync, phase_guard, g["verify_step_s"])
                    row += [oracle, tg - oracle]
                table.add(*row)
    return [table]


def _guard_oracle(model, toa, tc, t_sync, phase_guard, step) -> float:
    if model.sigma_s == 0:
        return 0.0
    if model.family is ErrorFamily.UNIFORM:
        # dense scan of the objective itself, resolution sigma/1000
        grid = np.arange(0.0, model.half_width_s * 2 + model.sigma_s / 2000, model.sigma_s / 1000)
        return float(grid[int(np.argmin(guard_objective(model, grid, toa, tc)))])
    return grid_search_guard(model, toa, tc, t_sync, phase_guard, 1.0, step)


# ---------------------------------------------------------------------------
# uncertainty


def cmd_uncertainty(args, cfg: dict) -> list[Table]:
    table = Table("uncertainty", ["component", "value_s"])
    for name, value in budget_from(cfg).rows():
        table.add(name, value)
    return [table]


# ---------------------------------------------------------------------------
# simulate / compare


def _run_one(job: tuple[dict, SweepPoint, int]) -> SimReport:
    cfg, point, seed = job
    return run_simulation(sim_config_from(cfg, point, seed))


def _run_all(args, cfg: dict) -> list[tuple[SweepPoint, int, SimReport]]:
    jobs = [(cfg, point, seed) for point in sweep_points(cfg) for seed in seed_list(cfg)]
    for j in jobs:  # surface config errors before any work starts
        sim_config_from(*j)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    return [(p, s, r) for (_, p, s), r in zip(jobs, reports)]


def _tag(point: SweepPoint, report: SimReport) -> str:
    g = report.run_meta["offered_load"]
    return f"{point.mac_mode.value}_sf{report.run_meta['sf']}_n{point.n_devices}_g{g:.6g}"


def cmd_simulate(args, cfg: dict) -> tuple[list[Table], list[dict]]:
    results = _run_all(args, cfg)
    summary = Table("summary", ["seed", "mac_mode", "sf", "n", "g", "s", "der", "jain"])
    tables = [summary]
    runs = []
    groups: dict[str, list[SimReport]] = {}
    for point, seed, rep in results:
        m = rep.run_meta
        summary.add(seed, m["mac_mode"], m["sf"], m["n_devices"], m["offered_load"],
                    rep.normalized_throughput, rep.der, rep.jain)
        tag = _tag(point, rep)
        groups.setdefault(tag, []).append(rep)

        dev = Table(f"runs/{tag}_seed{seed}_devices", ["device_id", "distance_m", "offered", "delivered", "ratio"])
        for d in rep.per_device:
            dev.add(d.device_id, d.distance_m, d.offered, d.delivered, d.ratio)
        bins = Table(
            f"runs/{tag}_seed{seed}_bins",
            ["bin_low_m", "bin_high_m", "attempts", "successes", "p_success", "ci50_low", "ci50_high"],
        )
        for b in rep.distance_bins:
            ci = b.interval(Z50) or (None, None)
            bins.add(b.r_low_m, b.r_high_m, b.attempts, b.successes, b.success_prob, *ci)
        tables += [dev, bins]
        runs.append({"tag": tag, "seed": seed, "config_hash": m["config_hash"], "counts": rep.counts})

    agg = Table(
        "aggregate",
        ["mac_mode", "sf", "n", "g", "replications", "s_mean", "s_se", "s_ci50_low", "s_ci50_high",
         "s_ci95_low", "s_ci95_high", "der_mean", "jain_mean"],
    )
    for reps in groups.values():
        m = reps[0].run_meta
        s = summarize(r.normalized_throughput for r in reps)
        der = summarize(r.der for r in reps)
        jain = summarize(r.jain for r in reps)
        agg.add(m["mac_mode"], m["sf"], m["n_devices"], m["offered_load"], s.n, s.mean, s.se,
                *s.ci50, *s.ci95, der.mean if der else None, jain.mean if jain else None)
    tables.insert(1, agg)
    return tables, runs


def cmd_compare(args, cfg: dict) -> tuple[list[Table], list[dict]]:
    cfg = copy.deepcopy(cfg)
    cfg["sim"]["mac_modes"] = [m.value for m in MacMode]
    results = _run_all(args, cfg)
    phy = phy_from(cfg)
    toa = phy.toa
    model = error_model_from(cfg)
    plan = plan_from(cfg, phy, model)
    p_l, p_r = inter_slot_probs(model, plan.guard_time_s, phy.t_c)
    t_i = cfg["inband"]["t_sync_s"]
    tg_i = inband_guard_s(cfg)

    table = Table("compare", ["n", "g", "mac_mode", "source", "s", "s_se"])
    sims: dict[tuple, list[float]] = {}
    for point, _, rep in results:
        sims.setdefault((point.n_devices, rep.run_meta["offered_load"], point.mac_mode), []).append(
            rep.normalized_throughput
        )
    for n, g in dict.fromkeys((k[0], k[1]) for k in sims):
        aloha = summarize(sims[(n, g, MacMode.PURE_ALOHA)])
        table.add(n, g, "PureAloha", "model", g * math.exp(-2.0 * g), None)
        table.add(n, g, "PureAloha", "sim", aloha.mean, aloha.se)
        table.add(n, g, "SlottedInband", "model", throughput_inband(g, tg_i, toa, sync_load=2.0 * n * toa / t_i), None)
        table.add(n, g, "SlottedOob", "model", throughput_oob(g, plan, toa, p_l, p_r), None)
        slotted = summarize(sims[(n, g, MacMode.SLOTTED_OOB)])
        table.add(n, g, "SlottedOob", "sim", slotted.mean, slotted.se)
    runs = [{"seed": s, "config_hash": r.run_meta["config_hash"]} for _, s, r in results]
    return [table], runs


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slora", description="Slotted LoRa uplink analytics, guard-time optimization and simulation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "throughput curves and the in-band / out-of-band ratio",
        "guard": "optimal guard time over sigma, error family and SF",
        "uncertainty": "timing-error budget and the equivalent sigma",
        "simulate": "Monte-Carlo runs: summary, per-device and distance-bin tables",
        "compare": "ALOHA, in-band and out-of-band slotted access side by side",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="YAML config or a manifest.json from an earlier run")
        p.add_argument("--out", type=Path, help="output directory (default: main table to stdout)")
        p.add_argument("--seed", type=_seed_list, help="comma-separated seeds, e.g. 1,2,3")
        p.add_argument("--replications", type=int, help="run at least K seeds (extends the seed list)")
        p.add_argument("--verify", action="store_true", help="add brute-force oracle columns")
        p.add_argument("--strict", action="store_true", help="treat optimizer fallbacks as failures")
        p.add_argument("--jobs", type=int, default=1, help="parallel simulation processes")
    return parser


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


COMMANDS = {
    "analyze": cmd_analyze,
    "guard": cmd_guard,
    "uncertainty": cmd_uncertainty,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, manifest = load_config(args.config)
        if args.seed is not None:
            cfg["sim"]["seeds"] = args.seed
            cfg["sim"]["replications"] = 1
        if args.replications is not None:
            cfg["sim"]["replications"] = args.replications
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        seed_list(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    with warnings.catch_warnings():
        if args.strict:
            warnings.simplefilter("error", BracketFallbackWarning)
        try:
            result = COMMANDS[args.command](args, cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except BracketFallbackWarning as exc:
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        except (SloraError, ArithmeticError, ValueError) as exc:
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    tables, runs = result if isinstance(result, tuple) else (result, [])
    emit(args, cfg, tables, runs)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
