"""Rehearsal schedules: how many samples of each class group are seen per phase.

A class group introduced at phase ``g`` is at offset ``x = t - g + 1`` during
phase ``t``; offset 1 is the introduction phase, where every law yields the
full group size ``N``.  All fractional counts are truncated.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import bisect

# guards floor() against values like 249.99999999997 that are exact in real arithmetic
_FLOOR_EPS = 1e-9

BISECT_LO = 0.0
BISECT_HI = 50.0
BISECT_XTOL = 1e-6
BISECT_MAXITER = 200


@dataclass(frozen=True)
class PowerLaw:
    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0 or self.b < 0:
            raise ValueError(f"power law needs a > 0 and b >= 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class Exponential:
    a: float
    b: float

    def __post_init__(self):
        if not self.a > 0 or self.b < 0:
            raise ValueError(f"exponential needs a > 0 and b >= 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class Uniform:
    c: int

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"uniform count must be >= 0, got {self.c}")


@dataclass(frozen=True)
class NoRehearsal:
    pass


@dataclass(frozen=True)
class Joint:
    pass


ScheduleKind = Union[PowerLaw, Exponential, Uniform, NoRehearsal, Joint]


@dataclass(frozen=True)
class FitSpec:
    """Constraints the fitted laws must satisfy.

    ``max_samples`` is the group size at introduction and ``min_prop`` the
    fraction of it that the first group still has at the last phase.
    """

    phases: int
    max_samples: int
    min_prop: float

    def __post_init__(self):
        if self.phases < 2:
            raise ValueError(f"need at least 2 phases, got {self.phases}")
        if self.max_samples < 1:
            raise ValueError(f"max_samples must be >= 1, got {self.max_samples}")
        if not 0.0 < self.min_prop <= 1.0:
            raise ValueError(f"min_prop must lie in (0, 1], got {self.min_prop}")


@dataclass
class PhasePlan:
    """Per-phase, per-group sample counts.  ``counts[t - 1, g - 1]`` is phase t, group g."""

    counts: np.ndarray
    group_intro_phase: list[int]
    max_samples: int
    kind: ScheduleKind = field(default_factory=NoRehearsal)

    @property
    def n_phases(self) -> int:
        return self.counts.shape[0]

    @property
    def n_groups(self) -> int:
        return self.counts.shape[1]

    def count(self, phase: int, group: int) -> int:
        """Count for 1-based ``phase`` and 0-based ``group``."""
        return int(self.counts[phase - 1, group])

    def rehearsed_total(self) -> int:
        """Sum of every non-introduction cell."""
        total = 0
        for g, intro in enumerate(self.group_intro_phase):
            total += int(self.counts[intro:, g].sum())
        return total

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["phase"] + [f"group_{g + 1}" for g in range(self.n_groups)])
        for t in range(self.n_phases):
            writer.writerow([t + 1] + [int(v) for v in self.counts[t]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PhasePlan":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "phase" or not all(h.startswith("group_") for h in header[1:]):
            raise ValueError(f"not a phase plan header: {header}")
        counts = np.array([[int(v) for v in r[1:]] for r in body], dtype=np.int64)
        intro = []
        for g in range(counts.shape[1]):
            nz = np.flatnonzero(counts[:, g])
            intro.append(int(nz[0]) + 1 if nz.size else counts.shape[0] + 1)
        max_samples = int(counts.max()) if counts.size else 0
        return cls(counts=counts, group_intro_phase=intro, max_samples=max_samples)


def fit_powerlaw_exponent(spec: FitSpec) -> float:
    """Exponent b for which the first group decays to ``min_prop`` at the last phase."""
    return math.log(1.0 / spec.min_prop) / math.log(spec.phases)


def _raw_count(kind: ScheduleKind, x: int) -> float:
    if isinstance(kind, PowerLaw):
        return kind.a * x ** (-kind.b)
    if isinstance(kind, Exponential):
        return kind.a * math.exp(-kind.b * x)
    if isinstance(kind, Uniform):
        return float(kind.c)
    if isinstance(kind, NoRehearsal):
        return 0.0
    raise ValueError(f"{type(kind).__name__} has no per-offset count law")


def schedule_count(kind: ScheduleKind, x: int) -> int:
    if x < 1:
        raise ValueError(f"offset must be >= 1, got {x}")
    return int(math.floor(_raw_count(kind, x) + _FLOOR_EPS))


def rehearsal_budget(kind: ScheduleKind, phases: int) -> int:
    """Total rehearsed samples over a run of ``phases`` phases, introductions excluded.

    Group g (1-based) is rehearsed at offsets 2..phases-g+1, so offset x
    occurs in ``phases - x + 1`` cells.
    """
    if isinstance(kind, NoRehearsal):
        return 0
    return sum((phases - x + 1) * schedule_count(kind, x) for x in range(2, phases + 1))


def fit_budget_matched_exponential(spec: FitSpec, b_pl: float) -> Exponential:
    """Exponential law with count N at introduction and the power law's rehearsal budget.

    With ``a = N e^b`` the count at offset x is ``N e^{-b (x - 1)}``, so the
    budget residual is strictly decreasing in b and bisection finds the root.
    """
    n, t = spec.max_samples, spec.phases
    offsets = np.arange(2, t + 1)
    weights = (t - offsets + 1).astype(np.float64)
    target = math.fsum(weights * n * offsets.astype(np.float64) ** (-b_pl))

    def residual(b: float) -> float:
        return math.fsum(weights * n * np.exp(-b * (offsets - 1))) - target

    r_lo, r_hi = residual(BISECT_LO), residual(BISECT_HI)
    if r_lo < 0 or r_hi > 0:
        raise ValueError(
            f"budget residual does not bracket a root on b in (0, {BISECT_HI}]: "
            f"r({BISECT_LO})={r_lo:.6g}, r({BISECT_HI})={r_hi:.6g}"
        )
    if r_lo == 0:
        b = 0.0
    else:
        b = bisect(residual, BISECT_LO, BISECT_HI, xtol=BISECT_XTOL, maxiter=BISECT_MAXITER)
    return Exponential(a=n * math.exp(b), b=b)


def fit_budget_matched_uniform(spec: FitSpec, b_pl: float) -> Uniform:
    """Flat per-group count spending the power law's (floored) budget evenly."""
    t = spec.phases
    cells = t * (t - 1) // 2
    budget = rehearsal_budget(PowerLaw(spec.max_samples, b_pl), t)
    return Uniform(c=budget // cells)


def build_phase_plan(kind: ScheduleKind, phases: int, max_samples: int) -> PhasePlan:
    counts = np.zeros((phases, phases), dtype=np.int64)
    if isinstance(kind, Joint):
        counts[:, :] = max_samples
        return PhasePlan(counts, [1] * phases, max_samples, kind)
    for g in range(phases):
        intro = g + 1
        counts[g, g] = max_samples
        for t in range(intro + 1, phases + 1):
            x = t - intro + 1
            counts[t - 1, g] = min(schedule_count(kind, x), max_samples)
    return PhasePlan(counts, list(range(1, phases + 1)), max_samples, kind)


@dataclass(frozen=True)
class FittedEnvironments:
    spec: FitSpec
    powerlaw: PowerLaw
    exponential: Exponential
    uniform: Uniform


def fit_all(spec: FitSpec) -> FittedEnvironments:
    """Power law, budget-matched exponential and budget-matched uniform for one spec."""
    b = fit_powerlaw_exponent(spec)
    return FittedEnvironments(
        spec=spec,
        powerlaw=PowerLaw(spec.max_samples, b),
        exponential=fit_budget_matched_exponential(spec, b),
        uniform=fit_budget_matched_uniform(spec, b),
    )


def kind_from_name(name: str, spec: FitSpec) -> ScheduleKind:
    """Resolve a schedule name (as used in configs and on the CLI) to a fitted kind."""
    name = name.lower()
    if name in ("powerlaw", "pl", "power-law"):
        return PowerLaw(spec.max_samples, fit_powerlaw_exponent(spec))
    if name in ("exponential", "exp"):
        return fit_budget_matched_exponential(spec, fit_powerlaw_exponent(spec))
    if name in ("uniform", "er"):
        return fit_budget_matched_uniform(spec, fit_powerlaw_exponent(spec))
    if name in ("none", "lb", "norehearsal"):
        return NoRehearsal()
    if name in ("joint", "ub"):
        return Joint()
    raise ValueError(f"unknown schedule kind {name!r}")
