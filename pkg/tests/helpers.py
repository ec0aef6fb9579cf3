"""Shared test utilities: finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from epdkit import tensor as T


def numeric_grad(build_loss, param: T.Tensor, h: float = 1e-3, coords=None) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. ``param``.

    ``build_loss`` re-evaluates the graph and returns the scalar loss Tensor;
    ``param`` must be float64 for the check to be meaningful. When ``coords``
    is given, only those flat indices are probed (the rest stay zero).
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    idxs = range(flat.size) if coords is None else coords
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(build_loss().data)
        flat[i] = orig - h
        fm = float(build_loss().data)
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(param.data.shape)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(build_loss, params, tol: float = 1e-4, coords=None) -> float:
    """Backprop once, then FD-check every tensor in ``params``. Returns worst error."""
    loss = build_loss()
    T.backward(loss)
    worst = 0.0
    for p in params:
        ng = numeric_grad(build_loss, p, coords=coords)
        if coords is None:
            err = max_rel_err(p.grad, ng)
        else:
            ag = p.grad.reshape(-1)[list(coords)]
            nv = ng.reshape(-1)[list(coords)]
            err = max_rel_err(ag, nv)
        worst = max(worst, err)
    assert worst < tol, f"gradient mismatch: max rel err {worst} >= {tol}"
    return worst
