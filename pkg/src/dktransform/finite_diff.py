"""Central finite differences with Richardson extrapolation.

These are the independent oracle for every exact-derivative path, and the
only derivative route for opaque callables.
"""

from __future__ import annotations

import numpy as np


def _richardson(estimates: list[np.ndarray]) -> np.ndarray:
    # estimates[k] computed with step h0 / 2**k, error series in even powers of h
    table = [np.asarray(e, dtype=float) for e in estimates]
    factor = 4.0
    while len(table) > 1:
        table = [(factor * table[k + 1] - table[k]) / (factor - 1.0) for k in range(len(table) - 1)]
        factor *= 4.0
    return table[0]


def _step(x: np.ndarray, rel_step: float, batched: bool) -> np.ndarray:
    if batched:
        return rel_step * np.maximum(1.0, np.max(np.abs(x), axis=-1))
    return np.asarray(rel_step * max(1.0, float(np.max(np.abs(x)))))


def _div(num: np.ndarray, h: np.ndarray) -> np.ndarray:
    return num / h.reshape(h.shape + (1,) * (num.ndim - h.ndim))


def jacobian(fn, x, rel_step: float = 0.05, levels: int = 4, batched: bool = False) -> np.ndarray:
    """Derivative tensor ``d fn / dx`` with shape ``out + (n,)``.

    With ``batched`` the rows of ``x`` are separate points, ``fn`` maps a
    stack of points to a stack of values and the result gains a leading axis.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h0 = _step(x, rel_step, batched)
    estimates = []
    for k in range(levels):
        h = h0 / 2**k
        cols = []
        for i in range(n):
            e = h[..., None] * np.eye(n)[i]
            cols.append(_div(np.asarray(fn(x + e)) - np.asarray(fn(x - e)), 2 * h))
        estimates.append(np.stack(cols, axis=-1))
    return _richardson(estimates)


def hessian(fn, x, rel_step: float = 0.05, levels: int = 4, batched: bool = False) -> np.ndarray:
    """Second-derivative tensor with shape ``out + (n, n)`` (see :func:`jacobian` for ``batched``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h0 = _step(x, rel_step, batched)
    estimates = []
    for k in range(levels):
        h = h0 / 2**k
        f0 = np.asarray(fn(x))
        rows = [[None] * n for _ in range(n)]
        for i in range(n):
            ei = h[..., None] * np.eye(n)[i]
            rows[i][i] = _div(np.asarray(fn(x + ei)) - 2 * f0 + np.asarray(fn(x - ei)), h**2)
            for j in range(i + 1, n):
                ej = h[..., None] * np.eye(n)[j]
                val = (
                    np.asarray(fn(x + ei + ej))
                    - np.asarray(fn(x + ei - ej))
                    - np.asarray(fn(x - ei + ej))
                    + np.asarray(fn(x - ei - ej))
                )
                rows[i][j] = rows[j][i] = _div(val, 4 * h**2)
        estimates.append(np.stack([np.stack(r, axis=-1) for r in rows], axis=-2))
    return _richardson(estimates)


def derivative(fn, x: float, order: int = 1, rel_step: float = 0.05, levels: int = 4) -> float:
    """Scalar first or second derivative of a function of one variable."""
    if order == 1:
        return float(jacobian(lambda v: fn(v[0]), np.array([x]), rel_step, levels)[..., 0])
    if order == 2:
        return float(hessian(lambda v: fn(v[0]), np.array([x]), rel_step, levels)[..., 0, 0])
    raise ValueError("order must be 1 or 2")
