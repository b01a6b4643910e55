"""One-dimensional quantum checks of the transformed Hamiltonian.

Hamiltonians are discretized in half-density form: ``psi~ = g^{1/4} psi``
lives in the flat ``L^2(dx)`` space, where the Laplace-Beltrami operator
``-g^{-1/4} d g^{-1/2} d g^{-1/4}`` becomes a symmetric tridiagonal matrix.
Resolvent kernels in this form are ``(M - E)^{-1}_{jk} / h``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal, solve_banded

from .errors import NoBoundState, NonPositiveTimeScale, SingularLinearSolve, SingularMetric, SpectrumOverlap, UnsupportedDimension
from .transform import SystemSpec, TransformSpec, classical_potential, final_metric_values, transform_system

REPORT_VERSION = "dktransform-quantum/1"


@dataclass(frozen=True)
class Grid1D:
    """Interior nodes ``x_min + j h`` (``j = 1..n``) of a Dirichlet box."""

    x_min: float
    x_max: float
    n: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("grid needs x_min < x_max")
        if self.n < 16:
            raise ValueError("grid needs at least 16 interior points")
        if self.boundary != "dirichlet":
            raise ValueError("only dirichlet boundaries are supported")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.spacing * np.arange(1, self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """Half-integer points ``x_{j+1/2}`` for ``j = 0..n``."""
        return self.x_min + self.spacing * (np.arange(self.n + 1) + 0.5)

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D(self.x_min, self.x_max, (self.n + 1) * factor - 1, self.boundary)


@dataclass
class Grid1DOperator:
    """Tridiagonal Hermitian matrix in half-density form plus the metric weights."""

    grid: Grid1D
    diag: np.ndarray
    offdiag: np.ndarray
    metric_weight: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        m = np.diag(self.diag.astype(self.offdiag.dtype))
        m += np.diag(self.offdiag, 1) + np.diag(np.conj(self.offdiag), -1)
        return m

    def scalar_matrix(self) -> np.ndarray:
        """Operator on scalar wavefunctions; self-adjoint in the ``metric_weight`` inner product."""
        w = np.sqrt(self.metric_weight)
        return self.matrix / w[:, None] * w[None, :]

    def banded(self, shift: float = 0.0) -> np.ndarray:
        ab = np.zeros((3, self.grid.n), dtype=self.offdiag.dtype)
        ab[0, 1:] = self.offdiag
        ab[1] = self.diag - shift
        ab[2, :-1] = np.conj(self.offdiag)
        return ab

    def eigenvalues(self, count: int) -> np.ndarray:
        return self.eigenpairs(count)[0]

    def eigenpairs(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Lowest ``count`` eigenpairs (vectors normalized in the flat grid sum)."""
        count = min(count, self.grid.n)
        off = self.offdiag
        # in 1D the Peierls phases are a pure gauge; rotate them away for the eigensolve
        phase = np.ones(self.grid.n, dtype=complex)
        if np.iscomplexobj(off):
            phase[1:] = np.cumprod(np.exp(1j * np.angle(off)))
            off = np.abs(off)
        w, v = eigh_tridiagonal(self.diag, off, select="i", select_range=(0, count - 1))
        if np.iscomplexobj(self.offdiag):
            v = v * phase[:, None]
        return w, v


def discretize_hamiltonian(sys: SystemSpec, grid: Grid1D) -> Grid1DOperator:
    """Three-point symmetric Laplace-Beltrami stencil with minimal coupling."""
    if sys.dim != 1:
        raise UnsupportedDimension(f"grid Hamiltonians are one-dimensional, got D = {sys.dim}")
    h = grid.spacing
    x = grid.nodes[:, None]
    xm = grid.midpoints[:, None]
    with np.errstate(all="ignore"):
        g = sys.metric.g.eval(x)[:, 0, 0]
        gm = sys.metric.g.eval(xm)[:, 0, 0]
        V = np.asarray(sys.scalar_potential.eval(x), dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(gm))) or np.any(g <= 0) or np.any(gm <= 0):
        raise SingularMetric("metric is not positive and finite on the grid")
    if not np.all(np.isfinite(V)):
        raise SingularMetric("scalar potential is not finite on the grid")
    kin = sys.hbar**2 / (2.0 * sys.mass * h * h)
    gq = g**-0.25
    gmi = gm**-0.5
    diag = kin * gq**2 * (gmi[1:] + gmi[:-1]) + V
    off = -kin * gq[:-1] * gmi[1:-1] * gq[1:]
    if sys.vector_potential is not None:
        A = np.asarray(sys.vector_potential.eval(xm[1:-1]), dtype=float).reshape(-1)
        if np.any(A != 0):
            # Peierls phase: (p - A)^2 hops pick up exp(i A h / hbar)
            off = off * np.exp(1j * A * h / sys.hbar)
    return Grid1DOperator(grid, diag, off, np.sqrt(g))


def extrapolated_eigenvalues(sys: SystemSpec, grid: Grid1D, count: int) -> np.ndarray:
    """Lowest eigenvalues with the leading ``h^2`` error removed.

    Combines the grid with its twofold refinement, ``(4 E_{h/2} - E_h) / 3``.
    """
    coarse = discretize_hamiltonian(sys, grid).eigenvalues(count)
    fine = discretize_hamiltonian(sys, grid.refined()).eigenvalues(count)
    return (4.0 * fine - coarse) / 3.0


def _lagrange_weights(nodes: np.ndarray, x: float) -> np.ndarray:
    w = np.ones(len(nodes))
    for i, xi in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if i != j:
                w[i] *= (x - xj) / (xi - xj)
    return w


def resolvent_kernel(op: Grid1DOperator, energy: float, a: float, b: float) -> complex | float:
    """Half-density kernel of ``(H - energy)^{-1}`` at arbitrary points ``a, b``.

    A tridiagonal inverse is semiseparable, ``G(i, j) = u_i v_j`` for ``i <= j``,
    so ``G(a, b) = G(a, k) G(k', b) / G(k', k)`` whenever ``k' <= a <= b <= k``.
    Only the smooth factors ``u`` and ``v`` are interpolated, which keeps the
    kink on the diagonal exact.
    """
    grid = op.grid
    h = grid.spacing
    swap = a > b
    if swap:
        a, b = b, a
    pa = (a - grid.x_min) / h
    pb = (b - grid.x_min) / h
    ia, ib = int(math.floor(pa)), int(math.floor(pb))
    na = np.arange(ia - 1, ia + 3)
    nb = np.arange(ib - 1, ib + 3)
    k_lo, k_hi = na[0], nb[-1]
    if k_lo < 1 or k_hi > grid.n:
        raise ValueError("probe point too close to the boundary for kernel interpolation")
    rhs = np.zeros((grid.n, 2), dtype=op.offdiag.dtype)
    rhs[k_hi - 1, 0] = 1.0
    rhs[k_lo - 1, 1] = 1.0
    try:
        cols = solve_banded((1, 1), op.banded(energy), rhs, check_finite=True) / h
    except (LinAlgError, ValueError) as exc:
        raise SingularLinearSolve(str(exc)) from exc
    if not np.all(np.isfinite(cols)):
        raise SingularLinearSolve("resolvent solve produced non-finite values")
    col_hi, col_lo = cols[:, 0], cols[:, 1]
    g_a_hi = _lagrange_weights(grid.x_min + h * na, a) @ col_hi[na - 1]
    g_lo_b = _lagrange_weights(grid.x_min + h * nb, b) @ col_lo[nb - 1]
    g_lo_hi = col_hi[k_lo - 1]
    if g_lo_hi == 0:
        raise SingularLinearSolve("vanishing resolvent element in the semiseparable factorization")
    val = g_a_hi * g_lo_b / g_lo_hi
    if np.iscomplexobj(val):
        return complex(np.conj(val)) if swap else complex(val)
    return float(val)


def _positive_time_scale(tr: TransformSpec, Q) -> np.ndarray:
    f = np.asarray(tr.time_scale.eval(np.asarray(Q, dtype=float).reshape(-1, 1)), dtype=float)
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise NonPositiveTimeScale("time scale is not positive on the final grid")
    return f


# -- zero-mode spectral check ------------------------------------------------------


@dataclass
class ZeroModeReport:
    levels: list
    final_eigenvalues: list
    offsets: list
    relative_offsets: list
    quantum_correction: bool
    grid_i: Grid1D
    grid_f: Grid1D

    @property
    def max_relative_offset(self) -> float:
        return float(max(self.relative_offsets))

    def as_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "kind": "zero-mode",
            "quantum_correction": self.quantum_correction,
            "grid_i": self.grid_i.__dict__,
            "grid_f": self.grid_f.__dict__,
            "levels": [
                {"k": k + 1, "energy": e, "final_eigenvalue": lam, "offset": off, "relative_offset": rel}
                for k, (e, lam, off, rel) in enumerate(zip(self.levels, self.final_eigenvalues, self.offsets, self.relative_offsets))
            ],
        }

    def to_csv(self, path) -> None:
        rows = self.as_dict()["levels"]
        _write_csv(path, ["k", "energy", "final_eigenvalue", "offset", "relative_offset"], rows)


def zero_mode_spectral_check(
    init: SystemSpec,
    tr: TransformSpec,
    grid_i: Grid1D,
    grid_f: Grid1D,
    k_max: int,
    *,
    quantum_correction: bool = True,
    window: float | None = None,
) -> ZeroModeReport:
    """Check that ``H^(f)`` built at ``E = E_k`` has a zero mode for each level.

    The zero mode of level ``k`` is the ``k``-th eigenvalue of the final
    operator (the congruence ``f^{3/4} (H - E) f^{1/4}`` preserves inertia).
    A residual eigenvalue ``lambda`` converts to an energy offset
    ``lambda / <phi|f|phi>``, the first-order shift that restores the zero.
    Only levels below ``window`` (if given) are tested.
    """
    if init.hbar <= 0:
        raise ValueError("the zero-mode check needs hbar > 0")
    op_i = discretize_hamiltonian(init, grid_i)
    levels = op_i.eigenvalues(k_max)
    if window is not None:
        levels = levels[levels < window]
    if len(levels) == 0:
        raise NoBoundState("no eigenvalues in the tested window")
    f_nodes = _positive_time_scale(tr, grid_f.nodes)
    lams, offsets = [], []
    for k, E in enumerate(levels):
        tr_k = tr.with_energy(float(E))
        sys_f = transform_system(init, tr_k).system
        if not quantum_correction:
            sys_f = replace(sys_f, scalar_potential=classical_potential(init, tr_k))
        op_f = discretize_hamiltonian(sys_f, grid_f)
        w, v = op_f.eigenpairs(k + 1)
        lam, phi = float(w[k]), v[:, k]
        mean_f = float(np.real(np.vdot(phi, f_nodes * phi)) / np.real(np.vdot(phi, phi)))
        lams.append(lam)
        offsets.append(lam / mean_f)
    scale = abs(levels[0]) if levels[0] != 0 else 1.0
    return ZeroModeReport(
        levels=[float(e) for e in levels],
        final_eigenvalues=lams,
        offsets=offsets,
        relative_offsets=[abs(o) / scale for o in offsets],
        quantum_correction=quantum_correction,
        grid_i=grid_i,
        grid_f=grid_f,
    )


# -- resolvent identity -------------------------------------------------------------


@dataclass
class AmplitudeCheckReport:
    energies_tested: list
    pairs: list
    lhs: list
    rhs: list
    relative_errors: list
    grid_convergence: dict
    prefactor_exponent: float

    @property
    def max_relative_error(self) -> float:
        return float(max(self.relative_errors))

    def as_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "kind": "resolvent",
            "energies_tested": self.energies_tested,
            "prefactor_exponent": self.prefactor_exponent,
            "pairs": [
                {"q": p[0], "q0": p[1], "lhs": _num(l), "rhs": _num(r), "relative_error": e}
                for p, l, r, e in zip(self.pairs, self.lhs, self.rhs, self.relative_errors)
            ],
            "grid_convergence": {str(k): v for k, v in self.grid_convergence.items()},
        }

    def to_csv(self, path) -> None:
        _write_csv(path, ["q", "q0", "lhs", "rhs", "relative_error"], self.as_dict()["pairs"])


def _num(z):
    return z if isinstance(z, float) else [z.real, z.imag]


def default_probe_pairs(domain: tuple, count: int = 5) -> list[tuple[float, float]]:
    """Pairs spread over the inner 60% of the box."""
    lo, hi = domain
    pts = lo + (hi - lo) * np.linspace(0.2, 0.8, count)
    pairs = [(float(pts[i]), float(pts[j])) for i in range(count) for j in range(i, count) if (i + j) % 2 == 0]
    return pairs


def _resolvent_pair_errors(init, tr, E_probe, pairs, grid_i, grid_f, beta):
    op_i = discretize_hamiltonian(init, grid_i)
    bottom_i = float(op_i.eigenvalues(1)[0])
    if E_probe >= bottom_i:
        raise SpectrumOverlap(f"probe energy {E_probe!r} is not below the initial spectrum (bottom {bottom_i!r})")
    sys_f = transform_system(init, tr.with_energy(E_probe)).system
    op_f = discretize_hamiltonian(sys_f, grid_f)
    bottom_f = float(op_f.eigenvalues(1)[0])
    if bottom_f <= 0:
        raise SpectrumOverlap("transformed Hamiltonian is not positive at the probe energy")
    lhs, rhs, errs = [], [], []
    for q, q0 in pairs:
        Q = tr.to_final(np.array([q]))
        Q0 = tr.to_final(np.array([q0]))
        f = _positive_time_scale(tr, np.concatenate([Q, Q0]))
        g = init.metric.g.eval(np.array([[q], [q0]]))[:, 0, 0]
        gf = final_metric_values(sys_f, np.stack([Q, Q0]))[:, 0, 0]
        # half-density conversion: prefactor (f f0)^beta times the metric-volume ratio
        factor = (f[0] * f[1]) ** beta * (g[0] * g[1] / (gf[0] * gf[1])) ** 0.25
        left = resolvent_kernel(op_i, E_probe, q, q0)
        right = factor * resolvent_kernel(op_f, 0.0, float(Q[0]), float(Q0[0]))
        lhs.append(left)
        rhs.append(right)
        errs.append(float(abs(right - left) / abs(left)))
    return lhs, rhs, errs


def resolvent_dk_check(
    init: SystemSpec,
    tr: TransformSpec,
    E_probe: float,
    pairs,
    grid_i: Grid1D,
    grid_f: Grid1D,
    *,
    prefactor_exponent: float | None = None,
    refine: bool = True,
) -> AmplitudeCheckReport:
    """Fixed-energy form of the amplitude relation, compared pairwise.

    ``lhs = <q|(H^(i) - E)^{-1}|q0>`` and ``rhs`` is the zero-energy
    resolvent of ``H^(f)(E)`` at ``Q(q), Q(q0)``, converted to half-density
    normalization in ``q``.  With ``refine`` the comparison is repeated on
    grids with twice the resolution.
    """
    if init.dim != 1:
        raise UnsupportedDimension("the resolvent check is one-dimensional")
    beta = (2 - init.dim) / 4 if prefactor_exponent is None else float(prefactor_exponent)
    pairs = [(float(a), float(b)) for a, b in pairs]
    lhs, rhs, errs = _resolvent_pair_errors(init, tr, E_probe, pairs, grid_i, grid_f, beta)
    conv = {grid_i.n: max(errs)}
    if refine:
        _, _, errs2 = _resolvent_pair_errors(init, tr, E_probe, pairs, grid_i.refined(), grid_f.refined(), beta)
        conv[grid_i.refined().n] = max(errs2)
    return AmplitudeCheckReport(
        energies_tested=[float(E_probe)],
        pairs=pairs,
        lhs=lhs,
        rhs=rhs,
        relative_errors=errs,
        grid_convergence=conv,
        prefactor_exponent=beta,
    )


def _write_csv(path, columns, rows) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {REPORT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([json.dumps(r[c]) if isinstance(r[c], list) else repr(r[c]) for c in columns])
