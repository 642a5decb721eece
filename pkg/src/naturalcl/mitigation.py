"""Regularization and gradient-projection strategies: EWC, SI, LwF and A-GEM.

Each strategy plugs into the training loop through the hooks of
:class:`Strategy`; the rehearsal environment only decides which samples
reach the loop, so the two compose freely.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    MlpModel,
    active_mask,
    backward,
    bce_loss,
    bce_with_logits,
    flatten,
    forward,
    sigmoid,
    unflatten,
)

FISHER_CHUNK = 2048


# ---------------------------------------------------------------------------
# EWC
# ---------------------------------------------------------------------------


@dataclass
class EwcState:
    lam: float = 100.0
    anchors: list[list[np.ndarray]] = field(default_factory=list)
    fishers: list[list[np.ndarray]] = field(default_factory=list)


def _chunks(x, targets, size=FISHER_CHUNK):
    for start in range(0, len(x), size):
        yield x[start:start + size], targets[start:start + size]


def fisher_diagonal(model: MlpModel, chunks, active_classes) -> list[np.ndarray]:
    """Mean over samples of the squared single-sample loss gradient.

    ``chunks`` yields ``(x, one_hot_targets)`` blocks.  The per-sample weight
    gradient is an outer product ``a_n delta_n^T``, so its elementwise square
    sums to ``(a^2)^T (delta^2)`` over a block.
    """
    mask = active_mask(active_classes, model.n_outputs)
    fisher = [np.zeros(p.shape, dtype=np.float64) for p in model.params]
    n = 0
    for xb, yb in chunks:
        n += len(xb)
        yb = np.asarray(yb, dtype=model.params[0].dtype)
        logits, acts = forward(model, xb)
        delta = np.zeros_like(logits)
        delta[:, mask] = (sigmoid(logits[:, mask]) - yb[:, mask]) / mask.sum()
        for i in range(model.n_layers - 1, -1, -1):
            a = acts[i].astype(np.float64)
            d = delta.astype(np.float64)
            fisher[2 * i] += (a * a).T @ (d * d)
            fisher[2 * i + 1] += (d * d).sum(axis=0)
            if i > 0:
                delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    if n == 0:
        raise ValueError("cannot estimate Fisher information from no samples")
    return [f / n for f in fisher]


def ewc_consolidate(model: MlpModel, x, targets, active_classes, state: EwcState) -> EwcState:
    """Anchor the current parameters with a Fisher estimate from ``(x, targets)``.

    ``targets=None`` treats ``x`` as an iterable of ``(x, targets)`` chunks.
    """
    chunks = x if targets is None else _chunks(np.asarray(x), np.asarray(targets))
    state.fishers.append(fisher_diagonal(model, chunks, active_classes))
    state.anchors.append([p.astype(np.float64).copy() for p in model.params])
    return state


def ewc_penalty_and_grad(model: MlpModel, state: EwcState):
    penalty = 0.0
    grads = [np.zeros(p.shape, dtype=np.float64) for p in model.params]
    for anchor, fisher in zip(state.anchors, state.fishers):
        for i, (p, a, f) in enumerate(zip(model.params, anchor, fisher)):
            diff = p.astype(np.float64) - a
            penalty += 0.5 * state.lam * float(np.sum(f * diff * diff))
            grads[i] += state.lam * f * diff
    return penalty, grads


# ---------------------------------------------------------------------------
# SI
# ---------------------------------------------------------------------------


@dataclass
class SiState:
    c: float = 0.5
    xi: float = 0.1
    omega: list[np.ndarray] = field(default_factory=list)
    importance: list[np.ndarray] = field(default_factory=list)
    anchors: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, c: float = 0.5, xi: float = 0.1) -> "SiState":
        return cls(
            c=c,
            xi=xi,
            omega=[np.zeros(p.shape) for p in model.params],
            importance=[np.zeros(p.shape) for p in model.params],
            anchors=[p.astype(np.float64).copy() for p in model.params],
        )


def si_accumulate(state: SiState, grads, param_delta) -> SiState:
    """Add ``-g * dtheta`` for one optimizer step to the running path integral."""
    if len(grads) != len(state.omega) or len(param_delta) != len(state.omega):
        raise ValueError("gradient/delta lists do not match the SI state")
    for w, g, d in zip(state.omega, grads, param_delta):
        if g.shape != w.shape or d.shape != w.shape:
            raise ValueError(f"shape mismatch: omega {w.shape}, grad {g.shape}, delta {d.shape}")
        w -= g.astype(np.float64) * d.astype(np.float64)
    return state


def si_consolidate(model: MlpModel, state: SiState) -> SiState:
    for i, p in enumerate(model.params):
        p64 = p.astype(np.float64)
        drift = p64 - state.anchors[i]
        state.importance[i] = np.maximum(
            state.importance[i] + state.omega[i] / (drift * drift + state.xi), 0.0
        )
        state.anchors[i] = p64.copy()
        state.omega[i] = np.zeros_like(state.omega[i])
    return state


def si_penalty_and_grad(model: MlpModel, state: SiState):
    penalty = 0.0
    grads = []
    for p, imp, a in zip(model.params, state.importance, state.anchors):
        diff = p.astype(np.float64) - a
        penalty += state.c * float(np.sum(imp * diff * diff))
        grads.append(2.0 * state.c * imp * diff)
    return penalty, grads


# ---------------------------------------------------------------------------
# LwF
# ---------------------------------------------------------------------------


@dataclass
class LwfState:
    alpha: float = 1.0
    tau: float = 2.0
    snapshot: MlpModel | None = None
    prev_active: list[int] = field(default_factory=list)


def distillation_loss(logits, prev_logits, mask, tau: float):
    """Soft BCE of ``sigmoid(z/tau)`` against ``sigmoid(z_prev/tau)`` and its logit gradient."""
    denom = logits.shape[0] * int(mask.sum())
    z = logits[:, mask] / tau
    q = sigmoid(prev_logits[:, mask] / tau)
    loss = float(bce_with_logits(z, q).sum() / denom)
    dlogits = np.zeros_like(logits)
    dlogits[:, mask] = (sigmoid(z) - q) / (tau * denom)
    return loss, dlogits


def lwf_loss_and_grads(model: MlpModel, state: LwfState, x, targets, active_classes, phase: int = 0):
    if phase >= 2 and state.snapshot is None:
        raise ValueError(f"LwF needs a previous-phase snapshot at phase {phase}")
    mask = active_mask(active_classes, model.n_outputs)
    logits, acts = forward(model, x)
    loss, dlogits = bce_loss(logits, np.asarray(targets, dtype=logits.dtype), mask)
    if state.snapshot is not None and state.prev_active:
        prev_logits, _ = forward(state.snapshot, x)
        prev_mask = active_mask(state.prev_active, model.n_outputs)
        dl, dd = distillation_loss(logits, prev_logits, prev_mask, state.tau)
        loss += state.alpha * dl
        dlogits = dlogits + state.alpha * dd
    return loss, backward(model, acts, dlogits)


# ---------------------------------------------------------------------------
# A-GEM
# ---------------------------------------------------------------------------


def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Remove the component of ``g`` that would increase the reference loss."""
    if g.shape != g_ref.shape:
        raise ValueError(f"gradient shapes differ: {g.shape} vs {g_ref.shape}")
    ref_sq = float(np.dot(g_ref, g_ref))
    if ref_sq == 0.0:
        return g
    dot = float(np.dot(g, g_ref))
    if dot >= 0.0:
        return g
    out = g - (dot / ref_sq) * g_ref
    # near-antiparallel inputs leave a rounding residual of order eps*|g|; one more pass removes it
    dot = float(np.dot(out, g_ref))
    if dot < 0.0:
        out = out - (dot / ref_sq) * g_ref
    return out


# ---------------------------------------------------------------------------
# Strategy hooks used by the training loop
# ---------------------------------------------------------------------------


class Strategy:
    """No mitigation: plain masked BCE."""

    name = "none"
    wants_reference = False
    # A-GEM keeps old samples as memory instead of mixing them into training batches
    rehearses_in_batch = True

    def loss_and_grads(self, model, x, targets, active, phase):
        mask = active_mask(active, model.n_outputs)
        logits, acts = forward(model, x)
        loss, dlogits = bce_loss(logits, np.asarray(targets, dtype=logits.dtype), mask)
        return loss, backward(model, acts, dlogits)

    def total_grads(self, model, loss, grads, reference=None):
        """Gradient actually applied by the optimizer."""
        return loss, grads

    def after_step(self, model, raw_grads, deltas):
        pass

    def end_phase(self, model, chunks, active, phase):
        """``chunks`` is a zero-argument callable yielding ``(x, targets)`` blocks of phase data."""


def _add(grads, extra):
    return [(g + e).astype(g.dtype) for g, e in zip(grads, extra)]


class Ewc(Strategy):
    name = "ewc"

    def __init__(self, lam: float = 100.0):
        self.state = EwcState(lam=lam)

    def total_grads(self, model, loss, grads, reference=None):
        if not self.state.anchors:
            return loss, grads
        pen, pgrads = ewc_penalty_and_grad(model, self.state)
        return loss + pen, _add(grads, pgrads)

    def end_phase(self, model, chunks, active, phase):
        ewc_consolidate(model, chunks(), None, active, self.state)


class Si(Strategy):
    name = "si"

    def __init__(self, c: float = 0.5, xi: float = 0.1):
        self.c, self.xi = c, xi
        self.state: SiState | None = None

    def _ensure(self, model):
        if self.state is None:
            self.state = SiState.for_model(model, self.c, self.xi)
        return self.state

    def total_grads(self, model, loss, grads, reference=None):
        st = self._ensure(model)
        pen, pgrads = si_penalty_and_grad(model, st)
        return loss + pen, _add(grads, pgrads)

    def after_step(self, model, raw_grads, deltas):
        si_accumulate(self._ensure(model), raw_grads, deltas)

    def end_phase(self, model, chunks, active, phase):
        si_consolidate(model, self._ensure(model))


class Lwf(Strategy):
    name = "lwf"

    def __init__(self, alpha: float = 1.0, tau: float = 2.0):
        self.state = LwfState(alpha=alpha, tau=tau)

    def loss_and_grads(self, model, x, targets, active, phase):
        return lwf_loss_and_grads(model, self.state, x, targets, active, phase)

    def end_phase(self, model, chunks, active, phase):
        self.state.snapshot = model.copy()
        self.state.prev_active = sorted(set(int(c) for c in active))


class Agem(Strategy):
    name = "agem"
    wants_reference = True
    rehearses_in_batch = False

    def total_grads(self, model, loss, grads, reference=None):
        if reference is None:
            return loss, grads
        xr, yr, active = reference
        _, ref_grads = Strategy.loss_and_grads(self, model, xr, yr, active, 0)
        g = agem_project(flatten(grads).astype(np.float64), flatten(ref_grads).astype(np.float64))
        return loss, unflatten(g, grads)


def make_strategy(kind: str, lam: float = 100.0, c: float = 0.5, xi: float = 0.1,
                  alpha: float = 1.0, tau: float = 2.0) -> Strategy:
    kind = kind.lower()
    if kind in ("none", ""):
        return Strategy()
    if kind == "ewc":
        return Ewc(lam)
    if kind == "si":
        return Si(c, xi)
    if kind == "lwf":
        return Lwf(alpha, tau)
    if kind in ("agem", "a-gem"):
        return Agem()
    raise ValueError(f"unknown mitigation kind {kind!r}")
