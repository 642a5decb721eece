"""Replay buffer that realizes a phase plan by nested random subsampling.

Each stream (a class in class-incremental runs, a permutation task in
domain-incremental runs) keeps an ordered list of dataset row indices.  At
every phase the list is cut down to a uniformly random subset of itself, so
retained sets only ever shrink.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .schedule import PhasePlan


@dataclass
class ReplayBuffer:
    rng_seed: int
    retained: dict[int, np.ndarray] = field(default_factory=dict)
    class_intro_phase: dict[int, int] = field(default_factory=dict)
    class_group: dict[int, int] = field(default_factory=dict)
    initial_size: dict[int, int] = field(default_factory=dict)
    history: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.rng_seed)

    def init_class(self, class_id: int, sample_indices, intro_phase: int, group: int = 0):
        if class_id in self.retained:
            raise ValueError(f"class {class_id} already in buffer")
        idx = np.asarray(sample_indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError(f"class {class_id}: empty index list")
        if np.unique(idx).size != idx.size:
            raise ValueError(f"class {class_id}: duplicate sample indices")
        self.retained[class_id] = idx.copy()
        self.class_intro_phase[class_id] = intro_phase
        self.class_group[class_id] = group
        self.initial_size[class_id] = idx.size
        return self

    def shrink_to(self, class_id: int, k: int):
        if class_id not in self.retained:
            raise KeyError(f"unknown class {class_id}")
        current = self.retained[class_id]
        if k > current.size or k < 0:
            raise ValueError(f"class {class_id}: cannot shrink {current.size} samples to {k}")
        if k < current.size:
            keep = np.sort(self._rng.choice(current.size, size=k, replace=False))
            self.retained[class_id] = current[keep]
        return self

    def target_size(self, class_id: int, phase: int, plan: PhasePlan, classes_per_group: int) -> int:
        """Per-class share of the plan's group count at ``phase``.

        Classes holding exactly ``N / classes_per_group`` samples get
        ``floor(count / classes_per_group)``; unequal classes get the same
        fraction of their own size.
        """
        count = plan.count(phase, self.class_group[class_id])
        size = self.initial_size[class_id]
        if size * classes_per_group == plan.max_samples:
            return count // classes_per_group
        return min(size, count * size // plan.max_samples)

    def realize(self, phase: int, plan: PhasePlan, classes_per_group: int = 1):
        """Shrink every introduced class to its plan target and log the counts."""
        for c in sorted(self.retained):
            if self.class_intro_phase[c] <= phase:
                self.shrink_to(c, self.target_size(c, phase, plan, classes_per_group))
                self.history.append((c, phase, int(self.retained[c].size)))
        return self

    def training_multiset(self, phase: int, plan: PhasePlan, classes_per_group: int = 1):
        """(sample_index, class_id) pairs for every class introduced by ``phase``.

        Old classes contribute their retained subset; classes introduced at
        ``phase`` contribute everything they hold.
        """
        idx_parts, cls_parts = [], []
        for c in sorted(self.retained):
            if self.class_intro_phase[c] > phase:
                continue
            kept = self.retained[c]
            expected = self.target_size(c, phase, plan, classes_per_group)
            if kept.size != expected:
                raise ValueError(
                    f"class {c} holds {kept.size} samples at phase {phase}, plan expects {expected}"
                )
            idx_parts.append(kept)
            cls_parts.append(np.full(kept.size, c, dtype=np.int64))
        if not idx_parts:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(idx_parts), np.concatenate(cls_parts)

    def old_classes(self, phase: int) -> list[int]:
        return sorted(c for c, p in self.class_intro_phase.items() if p < phase)

    def rehearsal_pool(self, phase: int):
        """Retained samples of classes introduced before ``phase`` (A-GEM memory)."""
        old = [c for c in self.old_classes(phase) if self.retained[c].size]
        if not old:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        idx = np.concatenate([self.retained[c] for c in old])
        cls = np.concatenate([np.full(self.retained[c].size, c, np.int64) for c in old])
        return idx, cls

    def dump_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class_id", "phase", "retained_count"])
        writer.writerows(self.history)
        return buf.getvalue()
