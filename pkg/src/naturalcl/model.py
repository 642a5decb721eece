"""Feed-forward ReLU network with sigmoid outputs, masked BCE loss and Adam.

Parameters are kept as a flat list ``[W0, b0, W1, b1, ...]`` so gradients,
optimizer moments and regularizer anchors can all be zipped together.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class MlpModel:
    layer_sizes: list[int]
    params: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def weights(self) -> list[np.ndarray]:
        return self.params[0::2]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.params[1::2]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_sizes), [p.copy() for p in self.params])


def init_mlp(layer_sizes, seed: int, dtype=np.float32) -> MlpModel:
    """Glorot-uniform weights, zero biases.  Needs at least one hidden layer."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise ValueError(f"need input, >= 1 hidden and output sizes, got {sizes}")
    if min(sizes) < 1:
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        params.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(sizes, params)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: MlpModel, x: np.ndarray):
    """Raw logits plus the list of layer inputs (x, h1, ..., hL) for backprop."""
    x = np.asarray(x, dtype=model.params[0].dtype)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"batch shape {x.shape} does not match input size {model.layer_sizes[0]}")
    acts = [x]
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i < model.n_layers - 1:
            h = np.maximum(z, 0)
            acts.append(h)
        else:
            return z, acts
    raise AssertionError("unreachable")


def backward(model: MlpModel, acts: list[np.ndarray], dlogits: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients given dLoss/dlogits and the activations from :func:`forward`."""
    grads: list[np.ndarray] = [None] * len(model.params)  # type: ignore[list-item]
    delta = dlogits
    for i in range(model.n_layers - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return grads


def one_hot(labels, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def active_mask(active_classes, n_outputs: int) -> np.ndarray:
    active = sorted(set(int(c) for c in active_classes))
    if not active:
        raise ValueError("active class set is empty")
    mask = np.zeros(n_outputs, dtype=bool)
    mask[active] = True
    return mask


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise -[y log s(z) + (1 - y) log(1 - s(z))] in the stable logit form."""
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_loss(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Mean masked BCE and its gradient with respect to the logits."""
    denom = logits.shape[0] * int(mask.sum())
    z, y = logits[:, mask], targets[:, mask]
    loss = float(bce_with_logits(z, y).sum() / denom)
    dlogits = np.zeros_like(logits)
    dlogits[:, mask] = (sigmoid(z) - y) / denom
    return loss, dlogits


def bce_loss_and_grads(model: MlpModel, x, one_hot_targets, active_classes):
    mask = active_mask(active_classes, model.n_outputs)
    logits, acts = forward(model, x)
    loss, dlogits = bce_loss(logits, np.asarray(one_hot_targets, dtype=logits.dtype), mask)
    return loss, backward(model, acts, dlogits)


def predict(model: MlpModel, x, active_classes) -> np.ndarray:
    """Argmax over the active outputs; ties resolve to the lowest class id."""
    active = np.array(sorted(set(int(c) for c in active_classes)))
    if active.size == 0:
        raise ValueError("active class set is empty")
    logits, _ = forward(model, x)
    return active[np.argmax(logits[:, active], axis=1)]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in model.params],
                   v=[np.zeros_like(p) for p in model.params], **kw)


def adam_step(model: MlpModel, state: AdamState, grads) -> list[np.ndarray]:
    """Bias-corrected Adam update in place.  Returns the realized parameter deltas."""
    if len(grads) != len(model.params) or any(g.shape != p.shape for g, p in zip(grads, model.params)):
        raise ValueError("gradient shapes do not match model parameters")
    if not state.m:
        state.m = [np.zeros_like(p) for p in model.params]
        state.v = [np.zeros_like(p) for p in model.params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    deltas = []
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        p -= step
        deltas.append(-step)
    return deltas


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


def unflatten(vec: np.ndarray, like) -> list[np.ndarray]:
    out, pos = [], 0
    for a in like:
        out.append(vec[pos:pos + a.size].reshape(a.shape).astype(a.dtype))
        pos += a.size
    return out


def save_checkpoint(model: MlpModel, path) -> None:
    """Little-endian float32 parameters plus a ``.layers`` text sidecar."""
    path = Path(path)
    flatten(model.params).astype("<f4").tofile(path)
    Path(str(path) + ".layers").write_text(" ".join(str(s) for s in model.layer_sizes) + "\n")


def load_checkpoint(path) -> MlpModel:
    path = Path(path)
    sizes = [int(s) for s in Path(str(path) + ".layers").read_text().split()]
    template = init_mlp(sizes, seed=0)
    vec = np.fromfile(path, dtype="<f4")
    if vec.size != template.n_params():
        raise ValueError(f"{path}: {vec.size} values, layer sizes imply {template.n_params()}")
    return MlpModel(sizes, unflatten(vec.astype(np.float32), template.params))
