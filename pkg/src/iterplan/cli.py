"""Command-line front end: ``iterplan synth|run|sweep|plot``.

Exit codes: 0 success, 2 I/O or configuration error, 3 specification parse
error, 4 unrealizable specification, failed verification or aborted run.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import tomli

from . import missions as ms
from . import plotting as pl
from . import speclang as sl
from . import synthesis as sy

EXIT_OK, EXIT_IO, EXIT_PARSE, EXIT_FAIL = 0, 2, 3, 4
CSV_HEADER = ("run_id", "task", "sorter", "universe", "targets", "seed",
              "sim_s", "ideal_s", "overhead", "wall_s")
SUMMARY_HEADER = ("task", "sorter", "universe", "targets", "n",
                  "mean_sim_s", "se_sim_s", "mean_overhead", "se_overhead")
PLOT_KINDS = ("line", "scatter", "path")

log = logging.getLogger("iterplan")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


def _setup_logging():
    level = os.environ.get("ITERPLAN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- synth

def _load_spec(source: str, order: int | None):
    if source.startswith("builtin:"):
        name = source.split(":", 1)[1]
        try:
            return name, sl.builtin_spec(name, order)
        except sl.SpecError as exc:
            raise CliError(str(exc), EXIT_PARSE) from None
        except (KeyError, ValueError) as exc:
            raise CliError(f"builtin spec {name!r}: {exc}") from None
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return path.stem, sl.parse(text)
    except sl.SpecError as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from None


def cmd_synth(args) -> int:
    name, doc = _load_spec(args.spec, args.order)
    t0 = time.perf_counter()
    log.info("synthesizing %s", name)
    try:
        arena, ctrl = sy.synthesize(doc)
    except sy.ArenaTooLarge as exc:
        raise CliError(str(exc), EXIT_FAIL) from None
    if ctrl is None:
        print(f"{name}: unrealizable ({len(arena.keys)} arena states)", file=sys.stderr)
        return EXIT_FAIL
    report = sy.verify_doc_controller(doc, ctrl)
    ms_ = (time.perf_counter() - t0) * 1000.0
    n_trans = len(ctrl.transitions)
    out = Path(args.out)
    _write(out / f"{name}.ctl", sy.controller_text(ctrl))
    _write(out / f"{name}.dot", sy.controller_dot(ctrl))
    lines = [f"spec {name}", f"arena_states {len(arena.keys)}", f"arena_sha256 {arena.digest()}",
             f"controller_states {len(ctrl.states)}", f"controller_transitions {n_trans}",
             f"verified {'yes' if report.ok else 'no'}"]
    lines += [f"violation {v.check} {v.message}" for v in report.violations]
    _write(out / f"{name}.report.txt", "".join(line + "\n" for line in lines))
    print("\n".join(lines + [f"wall_ms {ms_:.1f}"]))
    return EXIT_OK if report.ok else EXIT_FAIL


# ---------------------------------------------------------------- run

def metrics_row(cfg: ms.MissionConfig, met: ms.Metrics, run_id: str = "") -> tuple:
    rid = run_id or f"{cfg.name or cfg.task}-{cfg.sorter}-{cfg.grid.n_cells}-{cfg.seed}"
    return (rid, cfg.task, cfg.sorter, cfg.grid.n_cells, cfg.n_targets(), cfg.seed,
            f"{met.sim_duration:.6f}", f"{met.ideal_duration:.6f}", f"{met.overhead_ratio:.6f}",
            f"{met.wall_clock:.3f}")


def _regions(cfg: ms.MissionConfig) -> dict:
    regions = {"patrol": cfg.patrol, "fire": cfg.fire, "interest": cfg.interest,
               "cover": cfg.cover, "waypoints": cfg.waypoints}
    if cfg.target is not None:
        regions["target"] = (cfg.target,)
    return {k: v for k, v in regions.items() if v}


def cmd_run(args) -> int:
    try:
        cfg = ms.load_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    except ms.MissionError as exc:
        raise CliError(f"bad config: {exc}") from None
    if args.seed is not None:
        cfg = ms.with_seed(cfg, args.seed)
    if args.log_level:
        cfg = replace(cfg, log_level=args.log_level)
    try:
        mlog, met = ms.run_mission(cfg)
    except ms.MissionError as exc:
        raise CliError(str(exc), EXIT_FAIL) from None
    name = cfg.name or Path(args.config).stem
    out = Path(args.out)
    row = metrics_row(cfg, met)
    text = _csv_text(CSV_HEADER, [row])
    _write(out / f"{name}.log", mlog.text())
    _write(out / f"{name}.csv", text)
    _write(out / f"{name}.poses.csv",
           _csv_text(("t", "x", "y", "heading"),
                     [(f"{t:.3f}", f"{x:.3f}", f"{y:.3f}", f"{h:.6f}") for t, x, y, h in mlog.poses]))
    pl.plot_path(cfg.grid, mlog.poses, out / f"{name}.svg", _regions(cfg),
                 [c for _, c in mlog.photos], f"{cfg.task} ({cfg.sorter}, seed {cfg.seed})")
    sys.stdout.write(text)
    if met.aborted:
        print(f"aborted: {met.aborted}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepPlan:
    task: str
    sorters: tuple
    universes: tuple
    targets: tuple = (None,)
    repetitions: int = 1
    seed: int = 0
    value: str = "overhead"
    name: str = "sweep"

    def __post_init__(self):
        if self.task not in ms.TASKS:
            raise CliError(f"unknown task {self.task!r}")
        if self.repetitions < 1:
            raise CliError("repetitions must be at least 1")
        if not self.sorters or not self.universes:
            raise CliError("a sweep needs at least one sorter and one universe size")
        if any(int(u) < 1 for u in self.universes):
            raise CliError("universe sizes must be positive")
        if self.value not in ("overhead", "sim_s"):
            raise CliError("value must be overhead or sim_s")

    def cells(self):
        for sorter in self.sorters:
            for u in self.universes:
                for k in self.targets:
                    for rep in range(self.repetitions):
                        yield (self.task, sorter, int(u), k, self.seed + rep)


def load_plan(path) -> SweepPlan:
    try:
        data = tomli.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read plan: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise CliError(f"{path}: {exc}") from None
    s = data.get("sweep")
    if not isinstance(s, dict) or "task" not in s:
        raise CliError("plan needs a [sweep] table with a task")
    targets = s.get("targets")
    if targets is None:
        targets = (None,)
    elif isinstance(targets, int):
        targets = (targets,)
    try:
        return SweepPlan(s["task"], tuple(s.get("sorters", ("distance",))),
                         tuple(int(u) for u in s.get("universes", ())), tuple(targets),
                         int(s.get("repetitions", 1)), int(s.get("seed", 0)),
                         s.get("value", "overhead"), s.get("name", Path(path).stem))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad plan: {exc}") from None


def run_cell(cell) -> tuple:
    """One sweep point; returns ('ok', row) or ('failed', message)."""
    task, sorter, universe, targets, seed = cell
    try:
        cfg = ms.scenario(task, universe, sorter, seed, targets)
        _, met = ms.run_mission(cfg)
    except Exception as exc:  # reported per cell, the sweep carries on
        return ("failed", f"{type(exc).__name__}: {exc}")
    if met.aborted:
        return ("failed", f"aborted: {met.aborted}")
    k = "" if targets is None else f"-{targets}"
    return ("ok", metrics_row(cfg, met, f"{task}-{sorter}-{universe}{k}-{seed}"))


def summarise(rows) -> list:
    """Mean and standard error per (task, sorter, universe, targets)."""
    groups = {}
    for r in rows:
        groups.setdefault((r[1], r[2], int(r[3]), int(r[4])), []).append(r)
    out = []
    for key in sorted(groups):
        g = groups[key]
        sim = pl.mean_se([float(r[6]) for r in g])
        ovh = pl.mean_se([float(r[8]) for r in g])
        out.append(key + (len(g), f"{sim[0]:.6f}", f"{sim[1]:.6f}", f"{ovh[0]:.6f}", f"{ovh[1]:.6f}"))
    return out


def _x_axis(plan: SweepPlan) -> str:
    return "targets" if len(plan.targets) > 1 and len(plan.universes) == 1 else "universe"


def cmd_sweep(args) -> int:
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
    cells = list(plan.cells())
    log.info("sweep %s: %d missions", plan.name, len(cells))
    jobs = max(1, args.jobs)
    if jobs == 1:
        results = [run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, cells))
    rows = sorted((r for status, r in results if status == "ok"), key=lambda r: (r[2], r[3], r[4], r[5]))
    failed = [(c, msg) for c, (status, msg) in zip(cells, results) if status == "failed"]
    out = Path(args.out)
    _write(out / f"{plan.name}.csv", _csv_text(CSV_HEADER, rows))
    summary = _csv_text(SUMMARY_HEADER, summarise(rows))
    _write(out / f"{plan.name}.summary.csv", summary)
    xkey = _x_axis(plan)
    points = [dict(zip(CSV_HEADER, r)) for r in rows]
    for p in points:
        p["universe"] = p[xkey]
    pl.plot_sweep(points, out / f"{plan.name}.svg", plan.value, plan.name, xlabel=xkey)
    status_lines = [f"{'-'.join(str(x) for x in c if x is not None)} {'ok' if s == 'ok' else 'failed ' + m}"
                    for c, (s, m) in zip(cells, results)]
    _write(out / f"{plan.name}.status.txt", "".join(line + "\n" for line in status_lines))
    sys.stdout.write(summary)
    if failed:
        for c, msg in failed:
            print(f"failed {c}: {msg}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- plot

def _read_csv(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def cmd_plot(args) -> int:
    table = _read_csv(args.csv)
    header, body = (tuple(table[0]), table[1:]) if table else (None, [])
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    if args.kind == "path":
        want = ("t", "x", "y", "heading")
        if header is not None and header != want:
            raise CliError(f"path plot needs columns {','.join(want)}")
        poses = [tuple(float(v) for v in r) for r in body]
        pl.plot_poses(poses, out, args.title)
    else:
        if header is not None and header != CSV_HEADER:
            raise CliError(f"expected columns {','.join(CSV_HEADER)}")
        points = [dict(zip(CSV_HEADER, r)) for r in body]
        if args.kind == "line":
            pl.plot_sweep(points, out, args.value, args.title)
        else:
            pl.plot_scatter(points, out, args.value, args.title)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iterplan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize and verify a controller")
    s.add_argument("spec", help="spec file, or builtin:NAME")
    s.add_argument("--order", type=int, default=None, help="arity for builtin:ordered_patrol")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="simulate one mission from a TOML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--log-level", choices=ms.LOG_LEVELS, default=None)
    r.set_defaults(func=cmd_run)

    w = sub.add_parser("sweep", help="run a sweep plan and aggregate")
    w.add_argument("plan")
    w.add_argument("--seed", type=int, default=None, help="override the plan's base seed")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", default=".", help="output directory")
    w.set_defaults(func=cmd_sweep)

    q = sub.add_parser("plot", help="render a CSV as SVG")
    q.add_argument("csv")
    q.add_argument("--kind", choices=PLOT_KINDS, default="line")
    q.add_argument("--value", choices=("overhead", "sim_s", "wall_s"), default="overhead")
    q.add_argument("--title", default="")
    q.add_argument("--out", default=None, help="output SVG path")
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"iterplan: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"iterplan: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
