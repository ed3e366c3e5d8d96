"""Central finite-difference verification of analytic gradients.

Runs in float64: callers build the graph from float64 leaf tensors so the
difference quotient is dominated by truncation, not storage precision.
"""

import numpy as np

from .tensor import Tensor


def _loss_value(fn, leaves):
    out = fn(leaves)
    return float(out.data.reshape(-1)[0]) if out.data.size == 1 else float(out.data.sum())


def numeric_gradient(fn, arrays, index, eps=1e-3, coords=None):
    """Central differences of a scalar loss w.r.t. arrays[index].

    fn: callable(list of Tensor) -> scalar Tensor, rebuilt per evaluation.
    coords: optional flat indices to probe; default all.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    flat_coords = range(target.size) if coords is None else coords
    grad = np.zeros(target.size, dtype=np.float64)
    for c in flat_coords:
        for sign in (+1.0, -1.0):
            probe = [b.copy() for b in base]
            probe[index].reshape(-1)[c] += sign * eps
            leaves = [Tensor(p, requires_grad=False, dtype=np.float64) for p in probe]
            val = _loss_value(fn, leaves)
            grad[c] += sign * val / (2.0 * eps)
    return grad.reshape(target.shape)


def analytic_gradients(fn, arrays):
    """Gradients of fn's scalar output w.r.t. every array, via backward()."""
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(leaves)
    if out.data.size != 1:
        out = out.sum()
    out.backward()
    return [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]


def max_relative_error(analytic, numeric, atol=1e-6):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    diff = np.abs(a - n)
    denom = np.maximum(np.abs(a), np.abs(n))
    rel = np.where(diff <= atol, 0.0, diff / np.maximum(denom, 1e-12))
    return float(rel.max()) if rel.size else 0.0


def check_gradients(fn, arrays, eps=1e-3, tol=1e-3, atol=1e-6, coords=None, rng=None,
                    max_coords=None):
    """Assert-style check: returns the worst relative error across all inputs.

    coords: per-input list of flat indices to probe, or None for all.
    max_coords: if set, probe at most this many randomly chosen coordinates
    per input (rng required).
    """
    analytic = analytic_gradients(fn, arrays)
    worst = 0.0
    for i in range(len(arrays)):
        size = np.asarray(arrays[i]).size
        if coords is not None:
            idx = coords[i]
        elif max_coords is not None and size > max_coords:
            idx = rng.choice(size, size=max_coords, replace=False)
        else:
            idx = None
        numeric = numeric_gradient(fn, arrays, i, eps=eps, coords=idx)
        if idx is not None:
            sel = np.asarray(list(idx), dtype=np.int64)
            err = max_relative_error(
                analytic[i].reshape(-1)[sel], numeric.reshape(-1)[sel], atol=atol
            )
        else:
            err = max_relative_error(analytic[i], numeric, atol=atol)
        worst = max(worst, err)
    if worst >= tol:
        raise AssertionError(f"gradient mismatch: max relative error {worst:.3e} >= {tol}")
    return worst
