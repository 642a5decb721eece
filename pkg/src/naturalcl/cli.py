"""``naturalcl`` command line: fit, plan, run, report."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import schedule as sch
from .runner import (
    emit_report,
    load_config,
    parse_seed_list,
    read_detail_csv,
    run_experiment,
    summary_table,
)


@dataclass
class Fit:
    spec: sch.FitSpec


@dataclass
class Plan:
    kind: str
    phases: int
    max_samples: int
    min_prop: float = 0.10
    out: Path | None = None


@dataclass
class Run:
    config: Path
    out: Path | None = None
    overrides: dict[str, str] = field(default_factory=dict)
    verbose: bool = False


@dataclass
class Report:
    csv: Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="naturalcl", description="Continual learning under naturalistic rehearsal schedules.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    f = sub.add_parser("fit", help="fit power-law, exponential and uniform constants")
    f.add_argument("--phases", type=int, required=True)
    f.add_argument("--max", type=int, required=True, dest="max_samples", help="group size at introduction")
    f.add_argument("--min-prop", type=float, default=0.10, help="first group's share at the last phase")

    pl = sub.add_parser("plan", help="print the per-phase, per-group sample counts as CSV")
    pl.add_argument("--kind", required=True,
                    choices=["powerlaw", "exponential", "uniform", "none", "joint"])
    pl.add_argument("--phases", type=int, required=True)
    pl.add_argument("--max", type=int, required=True, dest="max_samples")
    pl.add_argument("--min-prop", type=float, default=0.10)
    pl.add_argument("--out", type=Path)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--out", type=Path)
    r.add_argument("--seed-list", help="comma-separated seeds, e.g. 1,2,3,4,5")
    r.add_argument("--data-dir", help="dataset directory (falls back to $NATURALCL_DATA_DIR)")
    r.add_argument("--workers", type=int)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, may repeat")
    r.add_argument("-v", "--verbose", action="store_true")

    rep = sub.add_parser("report", help="summarize a results CSV or pretty-print a plan CSV")
    rep.add_argument("csv", type=Path)
    return p


def parse_args(argv) -> Fit | Plan | Run | Report:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    ns = parser.parse_args(argv)
    if ns.command == "fit":
        try:
            return Fit(sch.FitSpec(ns.phases, ns.max_samples, ns.min_prop))
        except ValueError as exc:
            parser.error(str(exc))
    if ns.command == "plan":
        return Plan(ns.kind, ns.phases, ns.max_samples, ns.min_prop, ns.out)
    if ns.command == "run":
        if not ns.config.is_file():
            parser.error(f"config file not found: {ns.config}")
        overrides = {}
        for item in ns.set:
            if "=" not in item:
                parser.error(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        if ns.seed_list:
            parse_seed_list(ns.seed_list)
            overrides["run.seeds"] = ns.seed_list
        if ns.data_dir:
            overrides["data.dir"] = ns.data_dir
        if ns.workers:
            overrides["run.workers"] = str(ns.workers)
        return Run(ns.config, ns.out, overrides, ns.verbose)
    if ns.command == "report":
        if not ns.csv.is_file():
            parser.error(f"file not found: {ns.csv}")
        return Report(ns.csv)
    parser.print_usage(sys.stderr)
    raise SystemExit(2)


def _fit(cmd: Fit) -> str:
    env = sch.fit_all(cmd.spec)
    t = cmd.spec.phases
    pl, ex, un = env.powerlaw, env.exponential, env.uniform
    return "\n".join([
        f"phases={t} max_samples={cmd.spec.max_samples} min_prop={cmd.spec.min_prop}",
        f"powerlaw     a={pl.a:.3f} b={pl.b:.6f}  f(x) = {pl.a:.3f} x^-{pl.b:.3f}",
        f"exponential  a={ex.a:.3f} b={ex.b:.6f}  f(x) = {ex.a:.3f} e^(-{ex.b:.3f} x)",
        f"uniform      c={un.c}",
        f"budget       powerlaw={sch.rehearsal_budget(pl, t)} exponential={sch.rehearsal_budget(ex, t)} "
        f"uniform={sch.rehearsal_budget(un, t)}",
    ]) + "\n"


def _plan(cmd: Plan) -> str:
    if cmd.kind in ("none", "joint"):
        kind = sch.NoRehearsal() if cmd.kind == "none" else sch.Joint()
    else:
        kind = sch.kind_from_name(cmd.kind, sch.FitSpec(cmd.phases, cmd.max_samples, cmd.min_prop))
    return sch.build_phase_plan(kind, cmd.phases, cmd.max_samples).to_csv()


def _report(cmd: Report) -> str:
    text = cmd.csv.read_text(encoding="utf-8")
    if text.startswith("phase,group_"):
        plan = sch.PhasePlan.from_csv(text)
        lines = ["Phase".ljust(8) + "".join(f"G{g + 1}".rjust(8) for g in range(plan.n_groups))]
        for t in range(plan.n_phases):
            lines.append(f"{t + 1}".ljust(8) + "".join(f"{int(v)}".rjust(8) for v in plan.counts[t]))
        lines.append(f"rehearsed samples (introductions excluded): {plan.rehearsed_total()}")
        return "\n".join(lines) + "\n"
    summaries = read_detail_csv(cmd.csv)
    return "".join(f"[{attr}]\n{summary_table(summaries, attr)}\n" for attr in ("acc_all", "acc_old", "acc_new"))


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if isinstance(cmd, Fit):
            sys.stdout.write(_fit(cmd))
        elif isinstance(cmd, Plan):
            text = _plan(cmd)
            if cmd.out:
                cmd.out.write_text(text, encoding="utf-8")
            sys.stdout.write(text)
        elif isinstance(cmd, Run):
            logging.basicConfig(level=logging.INFO if cmd.verbose else logging.WARNING,
                                format="%(asctime)s %(levelname)s %(message)s")
            cfg = load_config(cmd.config, cmd.overrides)
            report = run_experiment(cfg)
            if cmd.out:
                for p in emit_report(report, cmd.out):
                    print(p)
            sys.stdout.write(summary_table({report.method: report.summary()}))
        else:
            sys.stdout.write(_report(cmd))
    except Exception as exc:  # noqa: BLE001 - one diagnostic line, nonzero exit
        print(f"naturalcl: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
