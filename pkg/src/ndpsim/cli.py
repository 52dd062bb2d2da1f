"""Command-line experiment runner.

    ndpsim generate --profile aes_like --seed 1 --out aes.trace
    ndpsim run aes.trace --policy cost --desk-scale 4
    ndpsim sweep --desk-scale 4 --out results/
    ndpsim verify aes.trace
    ndpsim report results/reports
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .engine import CSV_COLUMNS, SimulationError, StatsReport, functional_verify, run
from .isa import TraceError, decode_trace, encode_contents, encode_trace, trace_stats
from .offloader import ALL_POLICIES, POLICY_NAMES, Policy, parse_policy
from .topology import ConfigError, SimConfig, default_config, desk_scale, load_config
from .workloads import WorkloadError, generate, get_profile, load_profiles

OUT_ENV = "NDPSIM_OUT"
BASELINE = "fixed-isp"


class CliError(RuntimeError):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "ndpsim-out"))


def build_config(config: str | None, factor: int | None) -> SimConfig:
    cfg = load_config(config) if config else default_config()
    if factor is not None:
        cfg = desk_scale(cfg, factor)
    return cfg


def contents_path(trace_path: Path) -> Path:
    return trace_path.with_name(trace_path.name + ".contents.json")


def read_trace(path: str | Path) -> "Trace":
    path = Path(path)
    if not path.exists():
        raise CliError(f"trace file {path} does not exist")
    side = contents_path(path)
    contents = side.read_bytes() if side.exists() else None
    return decode_trace(path.read_bytes(), contents)


def write_trace(t, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_trace(t))
        blob = encode_contents(t)
        if blob is not None:
            contents_path(path).write_bytes(blob)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def write_report(r: StatsReport, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(r.to_json())


def write_csv(rows: list[dict], path: Path, columns: Sequence[str] = CSV_COLUMNS) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in columns})


def csv_row_from_report(d: dict) -> dict:
    f = d["decision_fractions"]
    return {"policy": d["policy"], "profile": d["profile"], "total_time_ns": d["total_time_ns"],
            "p99_ns": d["p99_ns"], "p9999_ns": d["p9999_ns"],
            "energy_compute_pj": sum(d["energy"]["compute_pj"].values()),
            "energy_dm_pj": d["energy"]["data_movement_pj"],
            "frac_isp": f["ISP"], "frac_pud": f["PUD"], "frac_ifp": f["IFP"]}


def timeline_runs(timeline: str) -> list[tuple[int, int, str]]:
    """Collapse a per-instruction resource string into (first, last, resource) runs."""
    from .engine import TIMELINE_DECODE
    runs = []
    start = 0
    for i in range(1, len(timeline) + 1):
        if i == len(timeline) or timeline[i] != timeline[start]:
            runs.append((start, i - 1, TIMELINE_DECODE[timeline[start]].value))
            start = i
    return runs


# --- subcommands -------------------------------------------------------------

def cmd_generate(args) -> int:
    profiles = load_profiles(args.config)
    prof = get_profile(args.profile, profiles).with_(seed=args.seed)
    if args.n is not None:
        prof = prof.with_(n_instructions=args.n)
    if args.working_set is not None:
        prof = prof.with_(working_set=args.working_set)
    cfg = build_config(args.config, args.desk_scale)
    t = generate(prof, cfg, contents=args.contents)
    out = Path(args.out) if args.out else default_out() / f"{prof.name}_s{args.seed}.trace"
    write_trace(t, out)
    s = trace_stats(t)
    mix = ", ".join(f"{k} {v:.1f}%" for k, v in s.latency_class_mix.items())
    print(f"wrote {out}: {s.n_instructions} instructions, vectorizable {s.vectorizable_pct:.1f}%, "
          f"avg reuse {s.avg_reuse:.2f}, mix {mix}")
    return 0


def cmd_run(args) -> int:
    t = read_trace(args.trace)
    cfg = build_config(args.config, args.desk_scale)
    policy = parse_policy(args.policy)
    r = run(t, cfg, policy, args.seed, functional=args.verify)
    out = Path(args.out) if args.out else default_out()
    stem = f"{t.header.profile or Path(args.trace).stem}__{policy.name}__s{args.seed}"
    write_report(r, out / f"{stem}.json")
    write_csv([r.csv_row()], out / f"{stem}.csv")
    print(f"{policy.name}: total {r.total_time} ns, p99 {r.p99} ns, p99.99 {r.p9999} ns, "
          f"energy {r.energy_total} pJ, fractions "
          + " ".join(f"{k}={v:.3f}" for k, v in r.decision_fractions.items()))
    if args.verify:
        v = functional_verify(t, r)
        print(f"functional check: {'pass' if v.passed else 'FAIL'} ({v.message})")
        if not v.passed:
            return 1
    return 0


def cmd_verify(args) -> int:
    t = read_trace(args.trace)
    if t.initial is None:
        raise CliError(f"{args.trace} has no initial contents sidecar; "
                       f"generate it with --contents")
    cfg = build_config(args.config, args.desk_scale)
    policies = ALL_POLICIES if args.policy == "all" else (parse_policy(args.policy),)
    failed = 0
    for p in policies:
        v = functional_verify(t, run(t, cfg, p, args.seed, functional=True))
        print(f"{p.name}: {'pass' if v.passed else 'FAIL'} {v.message}")
        failed += not v.passed
    return 1 if failed else 0


@dataclass(frozen=True)
class Cell:
    profile: str
    policy: str
    seed: int


@dataclass
class ExperimentPlan:
    cells: list[Cell]
    out: Path
    config: str | None = None
    desk_scale: int | None = None
    n_instructions: int | None = None

    def validate(self) -> "ExperimentPlan":
        if not self.cells:
            raise CliError("experiment has no cells")
        names = [cell_name(c) for c in self.cells]
        if len(set(names)) != len(names):
            raise CliError("experiment cells must be unique")
        return self


def cell_name(c: Cell) -> str:
    return f"{c.profile}__{c.policy}__s{c.seed}"


def _run_cell(plan: ExperimentPlan, cells: list[Cell]) -> list[tuple[Cell, str | None]]:
    """Run every policy cell that shares one (profile, seed) trace."""
    cfg = build_config(plan.config, plan.desk_scale)
    profiles = load_profiles(plan.config)
    prof = get_profile(cells[0].profile, profiles).with_(seed=cells[0].seed)
    if plan.n_instructions is not None:
        prof = prof.with_(n_instructions=plan.n_instructions)
    out = []
    try:
        t = generate(prof, cfg)
    except Exception as exc:  # reported per cell below
        return [(c, f"{type(exc).__name__}: {exc}") for c in cells]
    for c in cells:
        try:
            r = run(t, cfg, parse_policy(c.policy), c.seed)
            write_report(r, plan.out / "reports" / f"{cell_name(c)}.json")
            out.append((c, None))
        except Exception as exc:
            out.append((c, f"{type(exc).__name__}: {exc}"))
    return out


def run_sweep(plan: ExperimentPlan, jobs: int = 1, baseline: str = BASELINE) -> list[str]:
    """Execute all cells, then merge per-cell reports into summary tables.

    Returns the list of failed cells (empty on success).
    """
    plan.validate()
    groups: dict[tuple[str, int], list[Cell]] = {}
    for c in plan.cells:
        groups.setdefault((c.profile, c.seed), []).append(c)
    results: list[tuple[Cell, str | None]] = []
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for part in ex.map(_run_cell, [plan] * len(groups), list(groups.values())):
                results.extend(part)
    else:
        for cells in groups.values():
            results.extend(_run_cell(plan, cells))
    failed = [f"{cell_name(c)}: {err}" for c, err in results if err]
    if failed:
        (plan.out / "failures.txt").write_text("\n".join(failed) + "\n")
    ok = [c for c, err in results if not err]
    summarize(plan.out, [plan.out / "reports" / f"{cell_name(c)}.json" for c in ok], baseline)
    return failed


def summarize(out: Path, report_files: Sequence[Path], baseline: str = BASELINE) -> list[dict]:
    """Merge report files into results, normalized, fraction, percentile and timeline tables."""
    reports = [json.loads(Path(p).read_text()) for p in report_files]
    order = {p.name: i for i, p in enumerate(ALL_POLICIES)}
    reports.sort(key=lambda d: (d["profile"], order.get(d["policy"], 99), d["policy"]))
    rows = [csv_row_from_report(d) for d in reports]
    write_csv(rows, out / "results.csv")
    base: dict[str, dict] = {}
    for d in reports:
        if d["policy"] == baseline:
            base.setdefault(d["profile"], d)
    norm = []
    for d in reports:
        b = base.get(d["profile"])
        e = d["energy"]["total_pj"]
        norm.append({
            "profile": d["profile"], "policy": d["policy"],
            "total_time_ns": d["total_time_ns"], "energy_pj": e,
            "speedup_vs_baseline": (b["total_time_ns"] / d["total_time_ns"]
                                    if b and d["total_time_ns"] else ""),
            "time_norm": (d["total_time_ns"] / b["total_time_ns"]
                          if b and b["total_time_ns"] else ""),
            "energy_norm": e / b["energy"]["total_pj"] if b and b["energy"]["total_pj"] else "",
        })
    write_csv(norm, out / "normalized.csv", ("profile", "policy", "total_time_ns", "time_norm",
                                              "speedup_vs_baseline", "energy_pj", "energy_norm"))
    write_csv(rows, out / "plot" / "fractions.csv",
              ("profile", "policy", "frac_isp", "frac_pud", "frac_ifp"))
    write_csv(rows, out / "plot" / "percentiles.csv", ("profile", "policy", "p99_ns", "p9999_ns"))
    energy = [{"profile": d["profile"], "policy": d["policy"],
               "energy_compute_pj": r["energy_compute_pj"], "energy_dm_pj": r["energy_dm_pj"]}
              for d, r in zip(reports, rows)]
    write_csv(energy, out / "plot" / "energy.csv",
              ("profile", "policy", "energy_compute_pj", "energy_dm_pj"))
    for d in reports:
        runs = [{"first": a, "last": b, "resource": res} for a, b, res in timeline_runs(d["timeline"])]
        write_csv(runs, out / "plot" / "timeline" / f"{d['profile']}__{d['policy']}.csv",
                  ("first", "last", "resource"))
    return rows


def cmd_sweep(args) -> int:
    profiles = load_profiles(args.config)
    names = args.profile or list(profiles)
    for n in names:
        get_profile(n, profiles)
    pols = args.policy or [p.name for p in ALL_POLICIES]
    for p in pols:
        parse_policy(p)
    seeds = args.seeds if args.seeds else [args.seed]
    cells = [Cell(pr, parse_policy(po).name, s) for pr in names for s in seeds for po in pols]
    out = Path(args.out) if args.out else default_out()
    plan = ExperimentPlan(cells, out, args.config, args.desk_scale, args.n)
    failed = run_sweep(plan, args.jobs, parse_policy(args.baseline).name)
    print(f"{len(cells) - len(failed)} of {len(cells)} cells written to {out}")
    for f in failed:
        print(f"failed: {f}", file=sys.stderr)
    return 1 if failed else 0


def cmd_report(args) -> int:
    files: list[Path] = []
    for p in map(Path, args.paths):
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise CliError("no report files found")
    out = Path(args.out) if args.out else default_out()
    rows = summarize(out, files, parse_policy(args.baseline).name)
    w = csv.DictWriter(sys.stdout, fieldnames=list(CSV_COLUMNS), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


# --- entry point -------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--desk-scale", type=int, metavar="FACTOR",
                   help="shrink channels, dies per channel and blocks by FACTOR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output path (default from ${OUT_ENV} or ./ndpsim-out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ndpsim", description="SSD near-data offloading simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a trace from a workload profile")
    _common(g)
    g.add_argument("--profile", required=True)
    g.add_argument("--n", type=int, help="number of instructions")
    g.add_argument("--working-set", type=int, help="working set in pages")
    g.add_argument("--contents", action="store_true", help="also write initial page contents")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="simulate one trace under one policy")
    _common(r)
    r.add_argument("trace")
    r.add_argument("--policy", default="cost", help=f"one of {', '.join(POLICY_NAMES)}")
    r.add_argument("--verify", action="store_true", help="carry page contents and check them")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run profiles x policies and write summary tables")
    _common(s)
    s.add_argument("--profile", action="append", help="repeatable; default all profiles")
    s.add_argument("--policy", action="append", help="repeatable; default all policies")
    s.add_argument("--seeds", type=int, nargs="+", help="seed schedule")
    s.add_argument("--n", type=int, help="instructions per trace")
    s.add_argument("--jobs", type=int, default=1, help="cells run concurrently")
    s.add_argument("--baseline", default=BASELINE)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="check functional results against the reference")
    _common(v)
    v.add_argument("trace")
    v.add_argument("--policy", default="all")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="merge report files into CSV tables")
    rp.add_argument("paths", nargs="+")
    rp.add_argument("--out")
    rp.add_argument("--baseline", default=BASELINE)
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, TraceError, WorkloadError, SimulationError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
