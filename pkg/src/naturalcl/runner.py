"""Multi-phase, multi-seed experiment orchestration and report output."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as dataio
from .buffer import ReplayBuffer
from .data import Dataset
from .mitigation import Strategy, make_strategy
from .model import AdamState, MlpModel, adam_step, init_mlp, one_hot, predict
from .protocol import Scenario, eval_set_upto, make_class_il, make_domain_il
from .schedule import FitSpec, Joint, NoRehearsal, PhasePlan, build_phase_plan, kind_from_name

log = logging.getLogger(__name__)

EVAL_CHUNK = 4096


@dataclass
class ExperimentConfig:
    method: str = ""
    # scenario
    scenario_kind: str = "class_il"
    phases: int = 5
    # schedule
    schedule_kind: str = "powerlaw"
    min_prop: float = 0.10
    max_samples: int = 0  # 0: largest group size in the training data
    # mitigation
    mitigation_kind: str = "none"
    mitigation_lambda: float = 100.0
    mitigation_c: float = 0.5
    mitigation_xi: float = 0.1
    mitigation_alpha: float = 1.0
    mitigation_tau: float = 2.0
    # model
    hidden_layers: int = 2
    width: int = 400
    # training
    batch_size: int = 128
    steps: int = 2000
    lr: float = 0.001
    fraction: float = 1.0
    # run
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    workers: int = 1
    # data
    data_source: str = "mnist"
    data_dir: str = ""
    train_csv: str = ""
    test_csv: str = ""
    pad: int = 0
    synth_classes: int = 10
    synth_dim: int = 32
    synth_per_class: int = 500
    synth_test_per_class: int = 200
    synth_separation: float = 6.0
    synth_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ValueError("seed list is empty")
        if self.steps < 1:
            raise ValueError(f"train.steps must be >= 1, got {self.steps}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"train.fraction must lie in (0, 1], got {self.fraction}")
        if self.phases < 1 or self.batch_size < 1 or self.hidden_layers < 1 or self.width < 1:
            raise ValueError("phases, batch size, hidden layers and width must all be >= 1")
        if self.scenario_kind not in ("class_il", "domain_il"):
            raise ValueError(f"unknown scenario kind {self.scenario_kind!r}")

    @property
    def label(self) -> str:
        if self.method:
            return self.method
        names = {"powerlaw": "PL", "exponential": "Exp", "uniform": "ER", "none": "LB", "joint": "UB"}
        sched = names.get(self.schedule_kind, self.schedule_kind)
        if self.mitigation_kind == "none":
            return sched
        mit = {"ewc": "EWC", "si": "SI", "lwf": "LwF", "agem": "A-GEM"}.get(
            self.mitigation_kind, self.mitigation_kind)
        # A-GEM's buffer is memory, not training data, so the schedule is not part of its name
        return mit if sched == "LB" or self.mitigation_kind == "agem" else f"{sched}+{mit}"


# flat config key -> ExperimentConfig field
CONFIG_KEYS = {
    "run.method": "method",
    "run.seeds": "seeds",
    "run.workers": "workers",
    "scenario.kind": "scenario_kind",
    "scenario.phases": "phases",
    "schedule.kind": "schedule_kind",
    "schedule.min_prop": "min_prop",
    "schedule.max_samples": "max_samples",
    "mitigation.kind": "mitigation_kind",
    "mitigation.lambda": "mitigation_lambda",
    "mitigation.c": "mitigation_c",
    "mitigation.xi": "mitigation_xi",
    "mitigation.alpha": "mitigation_alpha",
    "mitigation.tau": "mitigation_tau",
    "model.hidden_layers": "hidden_layers",
    "model.width": "width",
    "train.batch_size": "batch_size",
    "train.steps": "steps",
    "train.lr": "lr",
    "train.fraction": "fraction",
    "data.source": "data_source",
    "data.dir": "data_dir",
    "data.train_csv": "train_csv",
    "data.test_csv": "test_csv",
    "data.pad": "pad",
    "synthetic.classes": "synth_classes",
    "synthetic.dim": "synth_dim",
    "synthetic.per_class": "synth_per_class",
    "synthetic.test_per_class": "synth_test_per_class",
    "synthetic.separation": "synth_separation",
    "synthetic.seed": "synth_seed",
}


def parse_seed_list(text: str) -> list[int]:
    return [int(s) for s in text.replace(" ", "").split(",") if s]


def parse_config_text(text: str) -> dict[str, str]:
    """``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def config_from_pairs(pairs: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = asdict(base) if base else {}
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    for key, raw in pairs.items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        name = CONFIG_KEYS[key]
        kind = types[name]
        if name == "seeds":
            values[name] = parse_seed_list(raw)
        elif kind == "int":
            values[name] = int(raw)
        elif kind == "float":
            values[name] = float(raw)
        else:
            values[name] = raw
    return ExperimentConfig(**values)


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    pairs = parse_config_text(Path(path).read_text(encoding="utf-8"))
    pairs.update(overrides or {})
    return config_from_pairs(pairs)


def config_to_text(cfg: ExperimentConfig) -> str:
    values = asdict(cfg)
    lines = []
    for key, name in CONFIG_KEYS.items():
        v = values[name]
        lines.append(f"{key} = {','.join(map(str, v)) if isinstance(v, list) else v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    source = cfg.data_source
    if source == "mnist":
        train, test = dataio.load_mnist(cfg.data_dir or None)
        pad = cfg.pad or (32 if cfg.scenario_kind == "domain_il" else 0)
        if pad:
            train, test = dataio.pad_images(train, pad), dataio.pad_images(test, pad)
        return train, test
    if source == "synthetic":
        return dataio.synth_train_test(cfg.synth_classes, cfg.synth_dim, cfg.synth_per_class,
                                       cfg.synth_test_per_class, cfg.synth_separation, cfg.synth_seed)
    if source == "features":
        if not cfg.train_csv or not cfg.test_csv:
            raise ValueError("data.source = features needs data.train_csv and data.test_csv")
        base = dataio.data_dir(cfg.data_dir or None) or Path(".")
        resolve = lambda p: Path(p) if Path(p).is_absolute() or Path(p).exists() else base / p
        return (dataio.load_feature_csv(resolve(cfg.train_csv)),
                dataio.load_feature_csv(resolve(cfg.test_csv)))
    raise ValueError(f"unknown data source {source!r}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class BatchSource:
    """Turns (sample_index, stream_key) pairs into feature/target arrays."""

    def __init__(self, train: Dataset, scenario: Scenario, n_outputs: int):
        self.train = train
        self.scenario = scenario
        self.n_outputs = n_outputs

    def __call__(self, idx: np.ndarray, keys: np.ndarray):
        x = self.train.features[idx]
        if self.scenario.kind == "domain_il":
            for task in np.unique(keys):
                perm = self.scenario.perms[int(task)]
                if not perm.is_identity:
                    sel = keys == task
                    x[sel] = x[sel][:, perm.perm]
        return x, one_hot(self.train.labels[idx], self.n_outputs)

    def chunks(self, idx, keys, size=2048):
        for start in range(0, idx.size, size):
            yield self(idx[start:start + size], keys[start:start + size])


def run_phase(model: MlpModel, optimizer: AdamState, strategy: Strategy, multiset, steps: int,
              batch_size: int, rng: np.random.Generator, *, source, active, phase: int,
              reference=None) -> MlpModel:
    """``steps`` Adam iterations on batches drawn with replacement from ``multiset``.

    ``reference`` (A-GEM only) is a callable ``rng -> (x, targets, active)`` or None.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    idx, keys = multiset
    if idx.size == 0:
        raise ValueError(f"phase {phase}: empty training multiset")
    for _ in range(steps):
        pick = rng.integers(0, idx.size, size=batch_size)
        x, y = source(idx[pick], keys[pick])
        loss, raw = strategy.loss_and_grads(model, x, y, active, phase)
        ref = reference(rng) if (reference is not None and strategy.wants_reference) else None
        _, grads = strategy.total_grads(model, loss, raw, ref)
        deltas = adam_step(model, optimizer, grads)
        strategy.after_step(model, raw, deltas)
    strategy.end_phase(model, lambda: source.chunks(idx, keys), active, phase)
    return model


def evaluate(model: MlpModel, parts, active, phase: int) -> tuple[float, float, float]:
    """Accuracy over all, previously introduced and newly introduced test parts."""
    correct = {"old": 0, "new": 0}
    total = {"old": 0, "new": 0}
    for part in parts:
        which = "new" if part.intro_phase == phase else "old"
        x, y = part.features(), part.labels()
        for s in range(0, len(y), EVAL_CHUNK):
            pred = predict(model, x[s:s + EVAL_CHUNK], active)
            correct[which] += int(np.sum(pred == y[s:s + EVAL_CHUNK]))
        total[which] += len(y)
    acc = lambda c, n: c / n if n else math.nan
    return (acc(correct["old"] + correct["new"], total["old"] + total["new"]),
            acc(correct["old"], total["old"]), acc(correct["new"], total["new"]))


@dataclass
class PhaseResult:
    seed: int
    phase: int
    acc_all: float
    acc_old: float
    acc_new: float
    rehearsed: int = 0


def _subsample(rows: np.ndarray, fraction: float, rng) -> np.ndarray:
    if fraction >= 1.0:
        return rows
    k = max(1, int(math.floor(rows.size * fraction)))
    return np.sort(rng.choice(rows, size=k, replace=False))


def build_scenario(cfg: ExperimentConfig, train: Dataset, seed: int) -> Scenario:
    if cfg.scenario_kind == "class_il":
        return make_class_il(train.n_classes, cfg.phases, seed)
    return make_domain_il(cfg.phases, train.dim, seed, n_classes=train.n_classes)


def build_plan(cfg: ExperimentConfig, group_sizes: list[int]) -> PhasePlan:
    n = cfg.max_samples or max(group_sizes)
    name = cfg.schedule_kind.lower()
    if name in ("none", "lb", "norehearsal"):
        kind = NoRehearsal()
    elif name in ("joint", "ub"):
        kind = Joint()
    else:
        if cfg.phases < 2:
            raise ValueError(f"schedule {name!r} needs at least 2 phases")
        kind = kind_from_name(name, FitSpec(cfg.phases, n, cfg.min_prop))
    return build_phase_plan(kind, cfg.phases, n)


def run_seed(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int,
             capture: dict | None = None) -> list[PhaseResult]:
    """One complete continual run; a pure function of ``(cfg, data, seed)``.

    ``capture``, if given, receives the final model, buffer, plan and scenario.
    """
    model_ss, buffer_ss, batch_ss, frac_ss = np.random.SeedSequence(seed).spawn(4)
    scenario = build_scenario(cfg, train, seed)
    frac_rng = np.random.default_rng(frac_ss)

    # rows of the training set owned by each buffer stream, and the stream's group
    stream_rows: dict[int, np.ndarray] = {}
    stream_group: dict[int, int] = {}
    for g in range(cfg.phases):
        for key in scenario.group_streams(g):
            if scenario.kind == "class_il":
                rows = np.flatnonzero(train.labels == key)
            else:
                rows = np.arange(len(train))
            stream_rows[key] = _subsample(rows, cfg.fraction, frac_rng)
            stream_group[key] = g
    group_sizes = [sum(stream_rows[k].size for k in scenario.group_streams(g)) for g in range(cfg.phases)]
    plan = build_plan(cfg, group_sizes)
    per_group = scenario.streams_per_group

    n_out = max(train.n_classes, test.n_classes)
    model = init_mlp([train.dim] + [cfg.width] * cfg.hidden_layers + [n_out],
                     seed=int(model_ss.generate_state(1)[0]))
    optimizer = AdamState.for_model(model, lr=cfg.lr)
    strategy = make_strategy(cfg.mitigation_kind, cfg.mitigation_lambda, cfg.mitigation_c,
                             cfg.mitigation_xi, cfg.mitigation_alpha, cfg.mitigation_tau)
    buffer = ReplayBuffer(rng_seed=int(buffer_ss.generate_state(1)[0]))
    batch_rng = np.random.default_rng(batch_ss)
    source = BatchSource(train, scenario, n_out)

    results = []
    for phase in range(1, cfg.phases + 1):
        for g in range(cfg.phases):
            if plan.group_intro_phase[g] == phase:
                for key in scenario.group_streams(g):
                    buffer.init_class(key, stream_rows[key], phase, group=stream_group[key])
        buffer.realize(phase, plan, per_group)
        idx, keys = buffer.training_multiset(phase, plan, per_group)
        intro = np.array([buffer.class_intro_phase[int(k)] for k in keys]) if keys.size else keys
        rehearsed = int(np.sum(intro < phase))
        if not strategy.rehearses_in_batch:
            keep = intro == phase
            idx, keys = idx[keep], keys[keep]

        introduced = [g for g in range(cfg.phases) if plan.group_intro_phase[g] <= phase]
        if scenario.kind == "class_il":
            active = sorted(c for g in introduced for c in scenario.groups[g])
        else:
            active = list(range(n_out))

        reference = None
        if strategy.wants_reference:
            pool_idx, pool_keys = buffer.rehearsal_pool(phase)
            if pool_idx.size:
                def reference(rng, pool_idx=pool_idx, pool_keys=pool_keys, active=active):
                    pick = rng.integers(0, pool_idx.size, size=cfg.batch_size)
                    x, y = source(pool_idx[pick], pool_keys[pick])
                    return x, y, active

        run_phase(model, optimizer, strategy, (idx, keys), cfg.steps, cfg.batch_size, batch_rng,
                  source=source, active=active, phase=phase, reference=reference)
        parts = eval_set_upto(scenario, test, phase, plan.group_intro_phase)
        acc_all, acc_old, acc_new = evaluate(model, parts, active, phase)
        results.append(PhaseResult(seed, phase, acc_all, acc_old, acc_new, rehearsed))
        log.info("%s seed=%d phase=%d acc_all=%.4f acc_old=%.4f acc_new=%.4f rehearsed=%d",
                 cfg.label, seed, phase, acc_all, acc_old, acc_new, rehearsed)
    if capture is not None:
        capture.update(model=model, buffer=buffer, plan=plan, scenario=scenario)
    return results


@dataclass
class RunReport:
    method: str
    config: ExperimentConfig
    results: list[PhaseResult]

    @property
    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.results})

    @property
    def phases(self) -> list[int]:
        return sorted({r.phase for r in self.results})

    def _values(self, phase: int, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.results if r.phase == phase], dtype=float)

    def summary(self) -> list[dict]:
        """Per-phase mean and sample SD over seeds (SD is 0 for a single seed)."""
        rows = []
        for phase in self.phases:
            row = {"phase": phase}
            for attr in ("acc_all", "acc_old", "acc_new"):
                vals = self._values(phase, attr)
                vals = vals[~np.isnan(vals)]
                row[f"{attr}_mean"] = float(vals.mean()) if vals.size else math.nan
                row[f"{attr}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else math.nan)
            row["rehearsed_mean"] = float(self._values(phase, "rehearsed").mean())
            rows.append(row)
        return rows

    def final(self, attr: str = "acc_all") -> tuple[float, float]:
        last = self.summary()[-1]
        return last[f"{attr}_mean"], last[f"{attr}_sd"]

    def rehearsal_budget(self, seed: int | None = None) -> int:
        seed = self.seeds[0] if seed is None else seed
        return sum(r.rehearsed for r in self.results if r.seed == seed)


def run_experiment(cfg: ExperimentConfig, datasets: tuple[Dataset, Dataset] | None = None) -> RunReport:
    train, test = datasets or load_datasets(cfg)
    results: list[PhaseResult] = []
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {s: pool.submit(run_seed, cfg, train, test, s) for s in cfg.seeds}
            for s in cfg.seeds:
                try:
                    results.extend(futures[s].result())
                except Exception as exc:
                    raise RuntimeError(f"{cfg.label}: seed {s} failed: {exc}") from exc
    else:
        for s in cfg.seeds:
            try:
                results.extend(run_seed(cfg, train, test, s))
            except Exception as exc:
                raise RuntimeError(f"{cfg.label}: seed {s} failed: {exc}") from exc
    report = RunReport(cfg.label, cfg, results)
    log.info("%s: rehearsed samples per run = %s", cfg.label,
             {s: report.rehearsal_budget(s) for s in report.seeds})
    return report


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

DETAIL_HEADER = ["method", "seed", "phase", "acc_all", "acc_old", "acc_new"]


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def detail_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETAIL_HEADER)
    for rep in reports:
        for r in sorted(rep.results, key=lambda r: (r.seed, r.phase)):
            w.writerow([rep.method, r.seed, r.phase, _fmt(r.acc_all), _fmt(r.acc_old), _fmt(r.acc_new)])
    return buf.getvalue()


def summary_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "phase", "acc_all_mean", "acc_all_sd", "acc_old_mean", "acc_old_sd",
                "acc_new_mean", "acc_new_sd"])
    for rep in reports:
        for row in rep.summary():
            w.writerow([rep.method, row["phase"]] + [
                _fmt(row[f"{a}_{s}"]) for a in ("acc_all", "acc_old", "acc_new") for s in ("mean", "sd")])
    return buf.getvalue()


def summary_table(summaries: dict[str, list[dict]], attr: str = "acc_all") -> str:
    """Methods as rows, phases as columns, cells ``mean (± sd)``."""
    phases = sorted({row["phase"] for rows in summaries.values() for row in rows})
    width = max([len(m) for m in summaries] + [6])
    lines = [" | ".join(["Method".ljust(width)] + [f"Phase {p}".ljust(17) for p in phases])]
    lines.append("-" * len(lines[0]))
    for method, rows in summaries.items():
        by_phase = {row["phase"]: row for row in rows}
        cells = []
        for p in phases:
            row = by_phase.get(p)
            mean = row[f"{attr}_mean"] if row else math.nan
            cells.append(("-" if math.isnan(mean) else f"{mean:.3f} (±{row[f'{attr}_sd']:.3f})").ljust(17))
        lines.append(" | ".join([method.ljust(width)] + cells))
    return "\n".join(lines) + "\n"


def emit_report(reports, out_dir, json_echo: bool = True) -> list[Path]:
    if isinstance(reports, RunReport):
        reports = [reports]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    put("results.csv", detail_csv(reports))
    put("summary.csv", summary_csv(reports))
    summaries = {r.method: r.summary() for r in reports}
    put("summary.txt", "".join(
        f"[{attr}]\n{summary_table(summaries, attr)}\n" for attr in ("acc_all", "acc_old", "acc_new")))
    if json_echo:
        payload = [{
            "method": r.method,
            "config": asdict(r.config),
            "summary": r.summary(),
            "rehearsed_per_seed": {str(s): r.rehearsal_budget(s) for s in r.seeds},
        } for r in reports]
        put("report.json", json.dumps(payload, indent=2, default=str, allow_nan=True) + "\n")
    return written


def read_detail_csv(path) -> dict[str, list[dict]]:
    """Summaries recomputed from a ``results.csv`` file, keyed by method."""
    by_method: dict[str, list[PhaseResult]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != DETAIL_HEADER:
            raise ValueError(f"{path}: expected header {DETAIL_HEADER}, got {reader.fieldnames}")
        for row in reader:
            val = lambda k: float(row[k]) if row[k] else math.nan
            by_method.setdefault(row["method"], []).append(
                PhaseResult(int(row["seed"]), int(row["phase"]), val("acc_all"), val("acc_old"), val("acc_new")))
    return {m: RunReport(m, ExperimentConfig(), rs).summary() for m, rs in by_method.items()}
