"""Transformation laws for metric, vector potential and scalar potential.

A :class:`TransformSpec` combines a holonomic space map ``q = q(Q)`` with a
time rescaling ``dt = f(Q) ds``.  The transformed system lives in the
``Q`` coordinates and evolves in the pseudotime ``s``:

* metric          ``g_f = f**c * e^T g e``   (``c`` is ``conformal_exponent``)
* vector pot.     ``A_f = e^T A``
* scalar pot.     ``V_f = f * (V - E)`` (classical) plus an ``hbar**2`` correction

where ``e = dq/dQ``.  With ``c = -1`` the pulled-back kinetic term is the one
produced by substituting ``dq = e dQ`` and ``dt = f ds`` into the action.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product as iproduct

import numpy as np

from .diffgeo import (
    FrameField,
    MetricField,
    check_positive_definite,
    christoffel_jet,
    frame_geometry,
    schwarz_residual,
)
from .errors import DegenerateFrame, NonPositiveTimeScale
from .jets import Jet, einsum2, inv
from .smoothmap import JetMap, SmoothMap, expression_map

CONTRACTIONS = ("metric_trace", "connection_trace")


@dataclass(frozen=True)
class SystemSpec:
    """Point mass on a Riemannian manifold with vector and scalar potentials."""

    metric: MetricField
    scalar_potential: SmoothMap
    vector_potential: SmoothMap | None = None
    mass: float = 1.0
    hbar: float = 0.0
    domain: tuple | None = None
    coords: str = "q"

    def __post_init__(self):
        d = self.metric.dim
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.hbar < 0:
            raise ValueError("hbar must be non-negative")
        if self.scalar_potential.arity_in != d or self.scalar_potential.out_shape != ():
            raise ValueError("scalar potential must map R^D to R")
        if self.vector_potential is not None:
            if self.vector_potential.arity_in != d or self.vector_potential.out_shape != (d,):
                raise ValueError("vector potential must map R^D to R^D")
        if self.domain is not None:
            dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
            if len(dom) != d or any(lo >= hi for lo, hi in dom):
                raise ValueError("domain must hold one (lo, hi) pair per coordinate with lo < hi")
            object.__setattr__(self, "domain", dom)

    @property
    def dim(self) -> int:
        return self.metric.dim

    def potential_energy(self, x) -> np.ndarray:
        return self.scalar_potential.eval(x)

    def kinetic_energy(self, x, v) -> np.ndarray:
        g = self.metric.g.eval(x)
        v = np.asarray(v, dtype=float)
        return 0.5 * self.mass * np.einsum("...i,...ij,...j->...", v, g, v)

    def energy(self, x, v) -> np.ndarray:
        return self.kinetic_energy(x, v) + self.potential_energy(x)

    def sample_points(self, per_axis: int = 5, margin: float = 0.05) -> np.ndarray:
        return sample_grid(self.domain, per_axis, margin)

    def with_hbar(self, hbar: float) -> "SystemSpec":
        return replace(self, hbar=float(hbar))


def sample_grid(domain, per_axis: int = 5, margin: float = 0.05) -> np.ndarray:
    if domain is None:
        raise ValueError("a domain box is required for grid sampling")
    axes = []
    for lo, hi in domain:
        pad = margin * (hi - lo)
        axes.append(np.linspace(lo + pad, hi - pad, per_axis))
    return np.array(list(iproduct(*axes)), dtype=float)


@dataclass(frozen=True)
class TransformSpec:
    """Space map ``q(Q)``, time scale ``f(Q)`` and initial-orbit energy ``E``."""

    space_map: SmoothMap
    time_scale: SmoothMap
    energy: float = 0.0
    inverse_map: SmoothMap | None = None
    conformal_exponent: int = -1
    domain: tuple | None = None

    def __post_init__(self):
        d = self.space_map.arity_in
        if self.space_map.out_shape != (d,):
            raise ValueError("space map must map R^D to R^D")
        if self.time_scale.arity_in != d or self.time_scale.out_shape != ():
            raise ValueError("time scale must be a scalar field on R^D")
        if self.inverse_map is not None and (
            self.inverse_map.arity_in != d or self.inverse_map.out_shape != (d,)
        ):
            raise ValueError("inverse map must map R^D to R^D")
        if self.conformal_exponent not in (1, -1):
            raise ValueError("conformal_exponent must be +1 or -1")
        if self.domain is not None:
            object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain))

    @property
    def dim(self) -> int:
        return self.space_map.arity_in

    @property
    def frame(self) -> FrameField:
        return FrameField(self.time_scale, space_map=self.space_map)

    def to_final(self, q, guess=None) -> np.ndarray:
        """``Q(q)``, from the inverse map or by Newton iteration.

        Without ``guess`` the iteration starts from the domain sample whose
        image is closest to ``q``.
        """
        if self.inverse_map is not None:
            return self.inverse_map.eval(q)
        if guess is None:
            if self.domain is None:
                raise ValueError("no inverse map or domain: a starting guess is required")
            pts = sample_grid(self.domain, 9 if self.dim < 3 else 5)
            dist = np.linalg.norm(self.space_map.eval(pts) - np.asarray(q, dtype=float), axis=-1)
            guess = pts[int(np.argmin(dist))]
        return invert_map(self.space_map, q, guess)

    def with_energy(self, energy: float) -> "TransformSpec":
        return replace(self, energy=float(energy))

    def with_exponent(self, exponent: int) -> "TransformSpec":
        return replace(self, conformal_exponent=int(exponent))

    def validate(self, points=None, per_axis: int = 5) -> list[str]:
        """Check positivity of ``f``, holonomy and inverse consistency; return all violations."""
        problems = []
        if points is None:
            if self.domain is None:
                return ["transform has no domain box to validate on"]
            points = sample_grid(self.domain, per_axis)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        f = self.time_scale.eval(points)
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            problems.append("time scale f(Q) must be positive on the domain")
        res = max(schwarz_residual(self.space_map, p) for p in points)
        if not res < 1e-8:
            problems.append(f"space map fails the integrability check (residual {res:.3g})")
        e = self.space_map.jacobian(points)
        dets = np.linalg.det(e)
        if np.any(~np.isfinite(dets)) or np.any(np.abs(dets) < 1e-12):
            problems.append("space map jacobian is singular on the domain")
        if self.inverse_map is not None:
            back = self.inverse_map.eval(self.space_map.eval(points))
            err = float(np.max(np.abs(back - points)))
            if not err < 1e-9:
                problems.append(f"inverse map is inconsistent: |Q(q(Q)) - Q| = {err:.3g}")
        return problems


def invert_map(space_map: SmoothMap, q, guess, tol: float = 1e-13, maxiter: int = 50) -> np.ndarray:
    """Newton solve of ``space_map(Q) = q``."""
    q = np.asarray(q, dtype=float)
    Q = np.array(guess, dtype=float)
    for _ in range(maxiter):
        r = space_map.eval(Q) - q
        if np.max(np.abs(r)) < tol * max(1.0, np.max(np.abs(q))):
            return Q
        J = space_map.jacobian(Q)
        Q = Q - np.linalg.solve(J, r[..., None])[..., 0]
    raise DegenerateFrame("Newton inversion of the space map did not converge")


# -- jet-level building blocks --------------------------------------------------------


def _scalar_to_matrix(f: Jet) -> Jet:
    return f.reshape_value(f.shape + (1, 1))


def _pulled_pieces(init: SystemSpec, tr: TransformSpec, x, order: int, extra: int):
    """Jets of q, e, g(q), G = e^T g e and f at points ``x`` (order ``order + extra``)."""
    QJ = Jet.variable(np.asarray(x, dtype=float), order + extra + 1)
    q = tr.space_map.jet(QJ)
    e = q.grad()
    g = init.metric.jet(q.truncate(order + extra))
    G = einsum2("...il,...im->...lm", e, einsum2("...ij,...jm->...im", g, e))
    f = tr.time_scale.jet(QJ)
    if np.any(f.val <= 0):
        raise NonPositiveTimeScale("time scale f(Q) must be positive")
    return QJ, q, e, G, f


def final_metric_jet(init: SystemSpec, tr: TransformSpec, x, order: int) -> Jet:
    _, _, _, G, f = _pulled_pieces(init, tr, x, order, 0)
    fc = f.truncate(order) ** float(tr.conformal_exponent)
    return _scalar_to_matrix(fc) * G.truncate(order)


def _max_order(*orders) -> int:
    return max(0, min(orders))


# -- transformation laws --------------------------------------------------------------


def pull_metric(init: SystemSpec, tr: TransformSpec) -> MetricField:
    """Final metric ``f**c e^i_l e^j_m g_ij(q(Q))``."""

    def fn(x, order):
        gf = final_metric_jet(init, tr, x, order)
        dets = np.linalg.det(gf.val)
        if np.any(~np.isfinite(dets)) or np.any(np.abs(dets) < 1e-300):
            raise DegenerateFrame("pulled-back metric is singular (space map jacobian degenerate)")
        return gf

    d = tr.dim
    order = _max_order(tr.space_map.max_order - 1, tr.time_scale.max_order, init.metric.g.max_order)
    return MetricField(JetMap(fn, d, (d, d), order))


def pull_vector_potential(init: SystemSpec, tr: TransformSpec) -> SmoothMap | None:
    """Covariant pull-back ``e^i_l A_i(q(Q))``; the time rescaling does not enter."""
    if init.vector_potential is None:
        return None

    def fn(x, order):
        QJ = Jet.variable(np.asarray(x, dtype=float), order + 1)
        q = tr.space_map.jet(QJ)
        e = q.grad()
        A = init.vector_potential.jet(q.truncate(order))
        return einsum2("...il,...i->...l", e, A)

    d = tr.dim
    order = _max_order(tr.space_map.max_order - 1, init.vector_potential.max_order)
    return JetMap(fn, d, (d,), order)


def classical_potential(init: SystemSpec, tr: TransformSpec) -> SmoothMap:
    """``f(Q) * (V(q(Q)) - E)``."""
    energy = float(tr.energy)

    def fn(x, order):
        QJ = Jet.variable(np.asarray(x, dtype=float), order)
        q = tr.space_map.jet(QJ)
        V = init.scalar_potential.jet(q)
        f = tr.time_scale.jet(QJ)
        return f * (V - energy)

    order = _max_order(tr.space_map.max_order, tr.time_scale.max_order, init.scalar_potential.max_order)
    return JetMap(fn, tr.dim, (), order)


def quantum_correction_direct(init: SystemSpec, tr: TransformSpec, contraction: str = "metric_trace") -> SmoothMap:
    """The ``hbar**2 / m`` part of the transformed potential, from ``f`` and the final metric.

    ``contraction`` selects how the Christoffel term is traced:
    ``"metric_trace"`` uses ``g^{ls} Gamma_{sl}^m`` and
    ``"connection_trace"`` uses ``g^{mn} Gamma_{ln}^l``.
    """
    if contraction not in CONTRACTIONS:
        raise ValueError(f"contraction must be one of {CONTRACTIONS}")
    d = tr.dim
    scale = init.hbar**2 / init.mass
    c = float(tr.conformal_exponent)

    def fn(x, order):
        _, _, _, G, f = _pulled_pieces(init, tr, x, order, 1)
        gf = _scalar_to_matrix(f.truncate(order + 1) ** c) * G.truncate(order + 1)
        gamma = christoffel_jet(gf)
        ginv = inv(gf.truncate(order))
        df = f.grad().truncate(order)
        ddf = f.grad().grad().truncate(order)
        f0 = f.truncate(order)
        if contraction == "metric_trace":
            trace = einsum2("...ls,...slm->...m", ginv, gamma)
        else:
            tr_gamma = einsum2("...ac,...abc->...b", np.eye(d), gamma)
            trace = einsum2("...mn,...n->...m", ginv, tr_gamma)
        t1 = einsum2("...m,...m->...", trace, df) / f0
        grad_sq = einsum2("...lm,...l->...m", ginv, df)
        grad_sq = einsum2("...m,...m->...", grad_sq, df) / (f0 * f0)
        lap = einsum2("...lm,...lm->...", ginv, ddf) / f0
        total = t1 * ((2 - d) / 8) + grad_sq * ((d - 2) * (d - 6) / 32) + lap * ((d - 2) / 8)
        return total * scale

    order = _max_order(tr.space_map.max_order - 2, tr.time_scale.max_order - 2, init.metric.g.max_order - 1)
    return JetMap(fn, d, (), order)


def quantum_potential_direct(init: SystemSpec, tr: TransformSpec, contraction: str = "metric_trace") -> SmoothMap:
    """Full transformed potential: classical part plus the direct quantum correction."""
    return add_maps(classical_potential(init, tr), quantum_correction_direct(init, tr, contraction))


def quantum_potential_geometric(init: SystemSpec, tr: TransformSpec, time_sign: float = 1.0) -> SmoothMap:
    """Quantum correction from torsion and curvature of the transformed spacetime.

    ``f hbar^2/m [ (4 - D^2)/8 S^2 + (D - 2)/16 (R_cartan - R_riemann) ]`` with
    all contractions taken with the spacetime metric ``E^T diag(time_sign, g) E``.
    Values only (no derivatives).
    """
    d = tr.dim
    scale = init.hbar**2 / init.mass
    frame = tr.frame
    metric = init.metric

    def fn(x, order):
        x = np.asarray(x, dtype=float)
        geo = frame_geometry(frame, metric, x, time_sign)
        val = geo.time_scale * scale * (
            (4 - d * d) / 8 * geo.torsion_squared + (d - 2) / 16 * (geo.cartan_scalar - geo.riemann_scalar)
        )
        return Jet(val, (), d)

    return JetMap(fn, d, (), 0)


def add_maps(a: SmoothMap, b: SmoothMap) -> SmoothMap:
    if a.arity_in != b.arity_in or a.out_shape != b.out_shape:
        raise ValueError("maps must have matching shapes")

    def fn(x, order):
        return a.local_jet(x, order) + b.local_jet(x, order)

    return JetMap(fn, a.arity_in, a.out_shape, min(a.max_order, b.max_order))


# -- bundled transformation ------------------------------------------------------------


@dataclass(frozen=True)
class TransformedSystem:
    system: SystemSpec
    quantum_correction: SmoothMap
    provenance: dict = field(default_factory=dict)


def zero_map(dim: int) -> SmoothMap:
    return expression_map(0.0, [f"Q{i + 1}" for i in range(dim)], ())


def transform_system(init: SystemSpec, tr: TransformSpec, contraction: str = "metric_trace") -> TransformedSystem:
    """Final-frame system; the quantum correction is included whenever ``hbar > 0``."""
    if init.dim != tr.dim:
        raise ValueError("system and transform dimensions differ")
    metric = pull_metric(init, tr)
    classical = classical_potential(init, tr)
    if init.hbar > 0:
        qu = quantum_correction_direct(init, tr, contraction)
        potential = add_maps(classical, qu)
    else:
        qu = zero_map(tr.dim)
        potential = classical
    system = SystemSpec(
        metric=metric,
        scalar_potential=potential,
        vector_potential=pull_vector_potential(init, tr),
        mass=init.mass,
        hbar=init.hbar,
        domain=tr.domain,
        coords="Q",
    )
    provenance = {
        "transform": tr,
        "initial_system": init,
        "conformal_exponent": tr.conformal_exponent,
        "contraction": contraction,
        "energy": tr.energy,
    }
    return TransformedSystem(system, qu, provenance)


def compose_transforms(first: TransformSpec, second: TransformSpec) -> TransformSpec:
    """Single transform equivalent to applying ``first`` then ``second`` (with ``second.energy`` 0)."""
    if first.dim != second.dim:
        raise ValueError("dimensions differ")
    if first.conformal_exponent != second.conformal_exponent:
        raise ValueError("conformal exponents differ")
    d = first.dim

    def space(x, order):
        QJ = Jet.variable(np.asarray(x, dtype=float), order)
        return first.space_map.jet(second.space_map.jet(QJ))

    def scale(x, order):
        QJ = Jet.variable(np.asarray(x, dtype=float), order)
        return first.time_scale.jet(second.space_map.jet(QJ)) * second.time_scale.jet(QJ)

    space_map = JetMap(space, d, (d,), min(first.space_map.max_order, second.space_map.max_order))
    time_scale = JetMap(scale, d, (), min(first.time_scale.max_order, second.space_map.max_order, second.time_scale.max_order))
    return TransformSpec(
        space_map=space_map,
        time_scale=time_scale,
        energy=first.energy,
        conformal_exponent=first.conformal_exponent,
        domain=second.domain,
    )


def final_metric_values(system: SystemSpec, x) -> np.ndarray:
    g = system.metric.g.eval(x)
    check_positive_definite(g)
    return g
