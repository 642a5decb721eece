"""Central finite differences, independent of the analytic backward pass."""
import numpy as np


def numeric_grads(loss_fn, params, h=1e-4):
    """d loss / d p for every entry of every array in ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic]).astype(np.float64)
    n = np.concatenate([np.ravel(x) for x in numeric]).astype(np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
