"""Independent symbolic oracles built on sympy.

Nothing here imports the package under test; the formulas are written
from textbook definitions so they can check the numerical code.
"""

from __future__ import annotations

import numpy as np
import sympy as sp


def symbols(prefix: str, dim: int):
    return sp.symbols(" ".join(f"{prefix}{i + 1}" for i in range(dim)), real=True, seq=True)


def to_sympy(text: str, names) -> sp.Expr:
    local = {str(n): n for n in names}
    return sp.sympify(text.replace("^", "**"), locals=local)


def christoffel(g: sp.Matrix, xs):
    """``gamma[l][m][n]`` = Gamma_lm^n of the Levi-Civita connection."""
    d = len(xs)
    ginv = g.inv()
    out = [[[0] * d for _ in range(d)] for _ in range(d)]
    for l in range(d):
        for m in range(d):
            for n in range(d):
                out[l][m][n] = sum(
                    ginv[n, s] * (sp.diff(g[s, m], xs[l]) + sp.diff(g[s, l], xs[m]) - sp.diff(g[l, m], xs[s]))
                    for s in range(d)
                ) / 2
    return out


def ricci_scalar(g: sp.Matrix, xs):
    d = len(xs)
    gam = christoffel(g, xs)
    # R^r_smn = d_m G^r_ns - d_n G^r_ms + G^r_mt G^t_ns - G^r_nt G^t_ms, with G^r_ab = gam[a][b][r]
    ric = sp.zeros(d, d)
    for s in range(d):
        for n in range(d):
            ric[s, n] = sum(
                sp.diff(gam[n][s][r], xs[r])
                - sp.diff(gam[r][s][r], xs[n])
                + sum(gam[r][t][r] * gam[n][s][t] - gam[n][t][r] * gam[r][s][t] for t in range(d))
                for r in range(d)
            )
    ginv = g.inv()
    return sum(ginv[a, b] * ric[a, b] for a in range(d) for b in range(d))


def final_metric(q_exprs, f_expr, g_init: sp.Matrix, qs, Qs, exponent: int = -1) -> sp.Matrix:
    e = sp.Matrix([[sp.diff(qi, Q) for Q in Qs] for qi in q_exprs])
    sub = dict(zip(qs, q_exprs))
    g = g_init.subs(sub)
    return f_expr**exponent * (e.T * g * e)


def transformed_data(q_texts, f_text, g_texts, point, exponent: int = -1):
    """Final metric and time scale with exact first and second derivatives at ``point``.

    Returns ``(G, dG, f, df, ddf)`` as floats with ``dG[k, i, j] = d_k G_ij``.
    """
    d = len(q_texts)
    Qs = symbols("Q", d)
    qs = symbols("q", d)
    q_exprs = [to_sympy(t, Qs) for t in q_texts]
    f_expr = to_sympy(f_text, Qs)
    g_init = sp.Matrix([[to_sympy(c, qs) for c in row] for row in g_texts])
    G = final_metric(q_exprs, f_expr, g_init, qs, Qs, exponent)
    sub = dict(zip(Qs, point))
    num = lambda e: float(e.subs(sub).evalf())  # noqa: E731
    Gn = np.array([[num(G[i, j]) for j in range(d)] for i in range(d)])
    dG = np.array([[[num(sp.diff(G[i, j], Qs[k])) for j in range(d)] for i in range(d)] for k in range(d)])
    fn = num(f_expr)
    df = np.array([num(sp.diff(f_expr, Q)) for Q in Qs])
    ddf = np.array([[num(sp.diff(f_expr, a, b)) for b in Qs] for a in Qs])
    return Gn, dG, fn, df, ddf


def _christoffel_numeric(G, dG):
    """``gamma[l, m, n]`` = Gamma_lm^n from the metric and its first derivatives."""
    Ginv = np.linalg.inv(G)
    low = 0.5 * (np.einsum("lsm->lms", dG) + np.einsum("msl->lms", dG) - np.einsum("slm->lms", dG))
    return np.einsum("ns,lms->lmn", Ginv, low)


def quantum_correction_operator(G, dG, f, df, ddf, hbar=1.0, mass=1.0):
    """Quantum correction from the operator identity ``H_f = f^((D+2)/4) (H - E) f^((2-D)/4)``.

    Written as ``hbar^2/m [ (D-2)/8 Lap(ln f) + (D-2)^2/32 |d ln f|^2 ]`` with the
    Laplace-Beltrami operator of the final metric.
    """
    d = len(df)
    Ginv = np.linalg.inv(G)
    gam = _christoffel_numeric(G, dG)
    du = df / f
    ddu = ddf / f - np.outer(df, df) / f**2
    lap = np.einsum("mn,mn->", Ginv, ddu) - np.einsum("mn,mnl,l->", Ginv, gam, du)
    grad2 = du @ Ginv @ du
    return hbar**2 / mass * ((d - 2) / 8 * lap + (d - 2) ** 2 / 32 * grad2)


def quantum_correction_literal(G, dG, f, df, ddf, hbar=1.0, mass=1.0, contraction="metric_trace"):
    """The printed three-term formula, with the Christoffel trace read one of two ways."""
    d = len(df)
    Ginv = np.linalg.inv(G)
    gam = _christoffel_numeric(G, dG)
    if contraction == "metric_trace":
        trace = np.einsum("ls,slm->m", Ginv, gam)
    else:
        trace = Ginv @ np.einsum("lnl->n", gam)
    t1 = (2 - d) / 8 * trace @ df / f
    t2 = (d - 2) * (d - 6) / 32 * (df @ Ginv @ df) / f**2
    t3 = (d - 2) / 8 * np.einsum("lm,lm->", Ginv, ddf) / f
    return hbar**2 / mass * (t1 + t2 + t3)


def lambdify(expr, xs):
    fn = sp.lambdify(list(xs), expr, modules="numpy")

    def call(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        val = fn(*[pts[:, i] for i in range(pts.shape[1])])
        return np.broadcast_to(np.asarray(val, dtype=float), pts.shape[:1]).copy()

    return call
