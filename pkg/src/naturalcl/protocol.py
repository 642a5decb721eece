"""Class-incremental splits, permuted-input domain tasks and per-phase test sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PixelPermutation


@dataclass(frozen=True)
class Scenario:
    kind: str  # "class_il" or "domain_il"
    n_phases: int
    seed: int
    groups: list[list[int]] = field(default_factory=list)
    perms: list[PixelPermutation] = field(default_factory=list)
    n_classes: int = 0

    @property
    def streams_per_group(self) -> int:
        return len(self.groups[0]) if self.kind == "class_il" else 1

    def group_streams(self, g: int) -> list[int]:
        """Buffer keys owned by 0-based group ``g``: class ids or the task id."""
        return list(self.groups[g]) if self.kind == "class_il" else [g]

    def to_manifest(self) -> str:
        lines = [f"kind = {self.kind}", f"phases = {self.n_phases}", f"seed = {self.seed}",
                 f"classes = {self.n_classes}"]
        if self.kind == "class_il":
            for t, grp in enumerate(self.groups, start=1):
                lines.append(f"phase {t}: " + " ".join(str(c) for c in grp))
        else:
            lines.append(f"dim = {len(self.perms[0])}")
            for t in range(1, self.n_phases + 1):
                lines.append(f"phase {t}: " + ("identity" if t == 1 else f"perm seed {self.seed},{t}"))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "Scenario":
        meta, phases = {}, {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("phase ") and ":" in line:
                head, body = line.split(":", 1)
                phases[int(head.split()[1])] = body.strip()
            else:
                k, v = (s.strip() for s in line.split("=", 1))
                meta[k] = v
        kind, n_phases, seed = meta["kind"], int(meta["phases"]), int(meta["seed"])
        n_classes = int(meta.get("classes", 0))
        if kind == "class_il":
            groups = [[int(c) for c in phases[t].split()] for t in range(1, n_phases + 1)]
            return cls("class_il", n_phases, seed, groups=groups, n_classes=n_classes)
        sc = make_domain_il(n_phases, int(meta["dim"]), seed)
        return cls("domain_il", n_phases, seed, perms=sc.perms, n_classes=n_classes)


def make_class_il(n_classes: int, n_phases: int, seed: int) -> Scenario:
    if n_phases < 1 or n_classes % n_phases:
        raise ValueError(f"{n_phases} phases do not divide {n_classes} classes")
    order = np.random.default_rng(seed).permutation(n_classes)
    size = n_classes // n_phases
    groups = [sorted(order[i * size:(i + 1) * size].tolist()) for i in range(n_phases)]
    return Scenario("class_il", n_phases, seed, groups=groups, n_classes=n_classes)


def _domain_perm(seed: int, phase: int, dim: int) -> PixelPermutation:
    if phase == 1:
        return PixelPermutation(np.arange(dim))
    return PixelPermutation(np.random.default_rng([seed, phase]).permutation(dim))


def make_domain_il(n_phases: int, dim: int, seed: int, n_classes: int = 10) -> Scenario:
    if dim < 1 or n_phases < 1:
        raise ValueError("dim and n_phases must be >= 1")
    perms = [_domain_perm(seed, t, dim) for t in range(1, n_phases + 1)]
    return Scenario("domain_il", n_phases, seed, perms=perms, n_classes=n_classes)


@dataclass
class EvalPart:
    """Test samples belonging to one group (class-IL) or one permutation task (domain-IL)."""

    group: int
    intro_phase: int
    dataset: Dataset
    rows: np.ndarray
    perm: PixelPermutation | None = None

    def features(self) -> np.ndarray:
        x = self.dataset.features[self.rows]
        return x if self.perm is None or self.perm.is_identity else x[:, self.perm.perm]

    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.rows]

    def __len__(self):
        return self.rows.size


def eval_set_upto(scenario: Scenario, test: Dataset, phase: int,
                  intro_phase: list[int] | None = None) -> list[EvalPart]:
    """Test parts for every group introduced by ``phase``.

    ``intro_phase`` overrides the default one-group-per-phase introduction
    (joint training introduces everything at phase 1).
    """
    if not 1 <= phase <= scenario.n_phases:
        raise ValueError(f"phase {phase} outside 1..{scenario.n_phases}")
    intro = intro_phase or list(range(1, scenario.n_phases + 1))
    parts = []
    for g in range(scenario.n_phases):
        if intro[g] > phase:
            continue
        if scenario.kind == "class_il":
            rows = np.flatnonzero(np.isin(test.labels, scenario.groups[g]))
            parts.append(EvalPart(g, intro[g], test, rows))
        else:
            parts.append(EvalPart(g, intro[g], test, np.arange(len(test)), scenario.perms[g]))
    return parts
