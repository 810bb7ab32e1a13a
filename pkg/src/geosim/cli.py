"""Command-line entry point: ``geosim <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .config import ConfigError, ResolvedConfig, _scale, load_config
from .engine import MetricsReport, SimConfig, run, run_geos, run_nibs
from .events import write_event_log
from .records import MIB
from .workload import load_countries

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

SWEEP_METRICS = (
    "strategy",
    "avg_txs_per_block",
    "avg_latency_s",
    "throughput_tps",
    "confirmation_s",
    "confirmation_extrapolated_s",
    "blocks_per_s",
    "blocks",
    "committed",
    "arrivals",
    "timeouts",
    "divergence",
    "error",
)

log = logging.getLogger("geosim")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


# ---------------------------------------------------------------- sweeps


def geos_nib_configs(rc: ResolvedConfig, **overrides) -> list[SimConfig]:
    profiles = load_countries()
    if rc.countries != "all":
        wanted = set(rc.countries)
        unknown = wanted - {p.iso for p in profiles}
        if unknown:
            raise ConfigError(f"unknown countries {sorted(unknown)}", "geos.countries")
        profiles = [p for p in profiles if p.iso in wanted]
    return [replace(rc.nib, country=p.iso, rate=None, stream=i, **overrides) for i, p in enumerate(profiles)]


def _point_configs(rc: ResolvedConfig, layer: str, point: dict, seed: int):
    def apply(cfg: SimConfig) -> SimConfig:
        kw = {"seed": seed}
        if "n" in point:
            kw["n"] = int(point["n"])
        if "b_max_mib" in point:
            kw["b_max"] = int(round(point["b_max_mib"] * MIB))
        if "dvf_ms" in point:
            kw["dvf"] = _scale(point["dvf_ms"], -3)
        if "strategy" in point:
            kw["strategy"] = point["strategy"]
        return replace(cfg, **kw)

    if layer == "NIB":
        cfg = apply(rc.nib)
        if "gamma" in point:
            cfg = replace(cfg, gamma=int(point["gamma"]))
        return cfg
    if layer == "GIB":
        return apply(replace(rc.gib, nib_n=rc.gib.nib_n or rc.nib.n))
    # GEOS: NIBs share the validator count and cadence, block size applies to the GIB
    n = int(point.get("n", rc.gib.n))
    gamma = int(point.get("gamma", rc.nib.gamma))
    nib_kw = {"n": n, "gamma": gamma, "seed": seed}
    if "dvf_ms" in point:
        nib_kw["dvf"] = _scale(point["dvf_ms"], -3)
    nibs = geos_nib_configs(rc, **nib_kw)
    gib = apply(replace(rc.gib, nib_n=n))
    return nibs, gib


def _row(report: MetricsReport) -> dict:
    return {
        "strategy": report.strategy,
        "avg_txs_per_block": report.avg_txs_per_block,
        "avg_latency_s": report.avg_latency_s,
        "throughput_tps": report.throughput_tps,
        "confirmation_s": report.confirmation_s,
        "confirmation_extrapolated_s": report.confirmation_extrapolated_s(),
        "blocks_per_s": report.blocks_per_s,
        "blocks": report.blocks,
        "committed": report.committed_txs,
        "arrivals": report.arrivals,
        "timeouts": report.timeouts,
        "divergence": report.divergence,
        "error": "",
    }


def _error_row(exc: Exception) -> dict:
    row = {k: "" for k in SWEEP_METRICS}
    row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return row


def _run_point(cfg: SimConfig) -> dict:
    try:
        return _row(run(cfg))
    except Exception as exc:  # per-point failures are recorded, the sweep goes on
        return _error_row(exc)


def sweep(rc: ResolvedConfig, parallel: int = 1) -> tuple[list[str], list[dict]]:
    """Run every grid point; returns (columns, rows) in grid order."""
    grid = rc.sweep
    if grid is None:
        raise ConfigError("config has no sweep axes", "sweep")
    names = [a for a, _ in grid.axes]
    points = []
    for rep in range(grid.repetitions):
        for values in itertools.product(*[v for _, v in grid.axes]):
            points.append((rep, dict(zip(names, values))))
    columns = names + ["rep", "seed"] + (["gib_rate"] if grid.layer == "GEOS" else []) + list(SWEEP_METRICS)
    rows: list[dict] = []
    if grid.layer in ("NIB", "GIB"):
        cfgs = []
        for rep, p in points:
            try:
                cfgs.append(_point_configs(rc, grid.layer, p, rc.nib.seed + rep))
            except (ValueError, TypeError) as exc:
                cfgs.append(exc)
        todo = [c for c in cfgs if isinstance(c, SimConfig)]
        if parallel > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=parallel) as ex:
                done = iter(ex.map(_run_point, todo, chunksize=4))
        else:
            done = iter([_run_point(c) for c in todo])
        for (rep, p), cfg in zip(points, cfgs):
            res = next(done) if isinstance(cfg, SimConfig) else _error_row(cfg)
            rows.append({**p, "rep": rep, "seed": rc.nib.seed + rep, **res})
        return columns, rows
    cache: dict = {}
    for rep, p in points:
        seed = rc.nib.seed + rep
        try:
            nib_cfgs, gib_cfg = _point_configs(rc, "GEOS", p, seed)
            todo = [c for c in nib_cfgs if c not in cache]
            for c, r in zip(todo, run_nibs(todo, parallel)):
                cache[c] = _slim(r)
            res = run_geos(nib_cfgs, gib_cfg, coupled=rc.coupled, nib_reports=[cache[c] for c in nib_cfgs])
            rows.append({**p, "rep": rep, "seed": seed, "gib_rate": res.gib_rate, **_row(res.gib)})
        except Exception as exc:
            rows.append({**p, "rep": rep, "seed": seed, "gib_rate": "", **_error_row(exc)})
    return columns, rows


def _slim(r: MetricsReport) -> MetricsReport:
    # cached NIB results only need their rates and report stream
    r.events = None
    r.ledgers = None
    return r


def rows_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------- plot data


def plot_data(sweep_csv: str, out_dir: str, x: str = "n", y: str = "throughput_tps") -> list[str]:
    """Split a sweep table into gnuplot column files, one per series."""
    with open(sweep_csv, encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return []
    if x not in rows[0] or y not in rows[0]:
        raise ConfigError(f"sweep table lacks column {x if x not in rows[0] else y!r}")
    metrics = set(SWEEP_METRICS) | {"rep", "seed", "gib_rate"}
    series_keys = [c for c in rows[0] if c not in metrics and c != x]
    groups: dict = defaultdict(list)
    for r in rows:
        groups[tuple((k, r[k]) for k in series_keys)].append(r)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for key, grp in groups.items():
        label = "_".join(f"{k}-{v}" for k, v in key) or "all"
        path = os.path.join(out_dir, f"{y}__{label}.dat")
        lines = [f"# {x} {y} ({', '.join(f'{k}={v}' for k, v in key)})"]
        lines += [f"{r[x]} {r[y]}" for r in grp if r.get("error", "") == ""]
        _write(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths


# ---------------------------------------------------------------- commands


def _resolve(args) -> ResolvedConfig:
    rc = load_config(args.config, preset=args.preset)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.duration is not None:
        kw["duration"] = args.duration
    if kw:
        flat = dict(rc.flat)
        if "seed" in kw:
            flat["run.seed"] = kw["seed"]
        if "duration" in kw:
            flat["run.duration_s"] = kw["duration"]
        rc = replace(rc, nib=replace(rc.nib, **kw), gib=replace(rc.gib, **kw), flat=flat)
    return rc


def _summary_line(tag: str, r: MetricsReport) -> str:
    return (f"{tag}: strategy={r.strategy} blocks={r.blocks} dt={r.avg_latency_s:.4f}s "
            f"tau={r.throughput_tps:.2f}tps D={r.confirmation_s:.3f}s bps={r.blocks_per_s:.4f}"
            + (" DIVERGING" if r.divergence else ""))


def _emit_single(args, rc: ResolvedConfig, report: MetricsReport, name: str) -> None:
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "resolved.cfg"), rc.echo())
    _write(os.path.join(args.out, f"{name}_metrics.csv"), report.to_csv())
    if report.events is not None:
        with open(os.path.join(args.out, f"{name}_events.csv"), "w", encoding="utf-8", newline="") as f:
            write_event_log(report.events, f)


def _divergence_exit(rc: ResolvedConfig, args, diverged: bool) -> int:
    if diverged and rc.divergence_fatal and not args.allow_divergence:
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_run_nib(args) -> int:
    rc = _resolve(args)
    report = run(rc.nib)
    print(_summary_line("NIB", report))
    _emit_single(args, rc, report, "nib")
    return _divergence_exit(rc, args, report.divergence)


def cmd_run_gib(args) -> int:
    rc = _resolve(args)
    if rc.gib.rate in (None, 0.0):
        raise ConfigError("a standalone GIB run needs gib.rate_tps", "gib.rate_tps")
    report = run(rc.gib)
    print(_summary_line("GIB", report))
    _emit_single(args, rc, report, "gib")
    return _divergence_exit(rc, args, report.divergence)


def cmd_run_geos(args) -> int:
    rc = _resolve(args)
    nibs = geos_nib_configs(rc)
    gib = replace(rc.gib, nib_n=rc.nib.n)
    res = run_geos(nibs, gib, coupled=rc.coupled, parallel=args.parallel)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "resolved.cfg"), rc.echo())
    cols = ["country", "rate_tps"] + list(SWEEP_METRICS)
    rows = [{"country": c.country, "rate_tps": c.arrival_rate, **_row(r)} for c, r in zip(nibs, res.nibs)]
    _write(os.path.join(args.out, "nib_summary.csv"), rows_csv(cols, rows))
    _write(os.path.join(args.out, "gib_metrics.csv"), res.gib.to_csv())
    print(f"{len(nibs)} NIBs, GIB arrival rate {res.gib_rate:.3f} reports/s")
    print(_summary_line("GIB", res.gib))
    if res.coupled:
        committed, in_gib, pending = res.conservation()
        print(f"conservation: committed={committed} reported_on_gib={in_gib} pending={pending}")
    diverged = res.gib.divergence or any(r.divergence for r in res.nibs)
    return _divergence_exit(rc, args, diverged)


def cmd_sweep(args) -> int:
    rc = _resolve(args)
    columns, rows = sweep(rc, args.parallel)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "sweep.csv"), rows_csv(columns, rows))
    _write(os.path.join(args.out, "resolved.cfg"), rc.echo())
    failed = sum(1 for r in rows if r.get("error"))
    diverged = sum(1 for r in rows if r.get("divergence") is True)
    print(f"{len(rows)} points -> {os.path.join(args.out, 'sweep.csv')} ({failed} failed, {diverged} diverging)")
    return _divergence_exit(rc, args, diverged > 0)


def cmd_verify_crypto(args) -> int:
    from .cryptocheck import run_suite

    res = run_suite(mutations=args.mutations, seed=args.seed if args.seed is not None else 7)
    for line in res.lines():
        print(line)
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_plot_data(args) -> int:
    paths = plot_data(args.input, args.out, args.x, args.y)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geosim", description="Two-layer immunization blockchain simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, preset_default=None):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--preset", metavar="NAME", default=preset_default)
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--duration", type=float, metavar="SECONDS")
        sp.add_argument("--out", metavar="DIR", default="out")
        sp.add_argument("--parallel", type=int, default=1, metavar="N")
        sp.add_argument("--allow-divergence", action="store_true", help="exit 0 even if a run diverges")

    for name, fn, preset, text in (
        ("run-nib", cmd_run_nib, None, "simulate one national chain"),
        ("run-gib", cmd_run_gib, None, "simulate the global chain at a given report rate"),
        ("run-geos", cmd_run_geos, "geos", "simulate all national chains feeding the global chain"),
        ("sweep", cmd_sweep, None, "run a parameter grid and write sweep.csv"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp, preset)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("verify-crypto", help="run the quorum-certificate property suite")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mutations", type=int, default=1000)
    sp.set_defaults(func=cmd_verify_crypto)

    sp = sub.add_parser("plot-data", help="split sweep.csv into gnuplot column files")
    sp.add_argument("--in", dest="input", required=True, metavar="CSV")
    sp.add_argument("--out", default="plot", metavar="DIR")
    sp.add_argument("--x", default="n")
    sp.add_argument("--y", default="throughput_tps")
    sp.set_defaults(func=cmd_plot_data)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
