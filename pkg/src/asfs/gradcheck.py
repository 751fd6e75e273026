"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np


def numeric_grad(f, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f() / d param by central differences; ``param`` is perturbed in place."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||), taken over the whole tensor.

    Returns the absolute difference when both norms fall below ``floor``.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    diff = float(np.linalg.norm(a - n))
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    if scale < floor:
        return diff
    return diff / scale


def check_gradients(f, params: dict, analytic: dict, steps=(1e-5, 1e-4, 1e-3), good: float = 1e-6) -> dict:
    """Relative error per parameter name.

    ``f`` evaluates the scalar loss from the current contents of ``params``.
    Steps are tried in order until one agrees to ``good``; the smallest error
    is kept. Tiny gradients of an O(1) loss lose their digits to cancellation
    at small steps, while a wrong gradient disagrees at every step.
    """
    out = {}
    for name in analytic:
        best = np.inf
        for step in np.atleast_1d(steps):
            best = min(best, relative_error(analytic[name], numeric_grad(f, params[name], float(step))))
            if best < good:
                break
        out[name] = best
    return out
