"""Christoffel symbols, curvature scalars and the geometry of the spacetime frame.

Index layout used throughout: a connection array ``gamma[..., a, b, c]``
holds the coefficient with lower indices ``a`` (the differentiating index)
and ``b`` and upper index ``c``, so that

    nabla_a V^c = d_a V^c + gamma[a, b, c] V^b.

Spacetime arrays put time at index 0 followed by the ``D`` spatial
coordinates.  All fields are static, so time derivatives vanish.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFrame, SingularMetric
from .jets import Jet, compose, einsum2, inv
from .smoothmap import SmoothMap


@dataclass(frozen=True)
class MetricField:
    """Symmetric positive-definite metric ``g_ij(x)`` given as a smooth map."""

    g: SmoothMap

    def __post_init__(self):
        n = self.g.arity_in
        if self.g.out_shape != (n, n):
            raise ValueError(f"metric must map R^{n} to {n}x{n} matrices, got {self.g.out_shape}")

    @property
    def dim(self) -> int:
        return self.g.arity_in

    @property
    def signature(self) -> str:
        return "positive-definite"

    def at(self, x) -> np.ndarray:
        m = self.g.eval(x)
        check_positive_definite(m)
        return m

    def jet(self, inner: Jet) -> Jet:
        return self.g.jet(inner)

    def local_jet(self, x, order: int) -> Jet:
        jet = self.g.local_jet(np.asarray(x, dtype=float), order)
        check_positive_definite(jet.val)
        return jet


def check_positive_definite(m: np.ndarray) -> None:
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise SingularMetric("metric has non-finite components")
    if np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(m))):
        raise SingularMetric("metric is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularMetric("metric is not positive definite (Cholesky failed)") from None


@dataclass(frozen=True)
class ConnectionField:
    """Connection coefficients sampled at one point (see module docstring for layout)."""

    dim: int
    gamma: np.ndarray
    torsion_flag: bool = False

    def torsion(self) -> np.ndarray:
        return 0.5 * (self.gamma - np.swapaxes(self.gamma, -3, -2))


@dataclass(frozen=True)
class FrameField:
    """Spacetime vielbein ``diag(f(Q), e(Q))`` of a time rescaling plus space map.

    Either ``space_map`` (a holonomic map ``q(Q)`` whose jacobian is the
    space block) or ``space_frame`` (a raw ``D x D`` coefficient field) is
    given.
    """

    time_scale: SmoothMap
    space_map: SmoothMap | None = None
    space_frame: SmoothMap | None = None
    dim_space: int = field(init=False)

    def __post_init__(self):
        if (self.space_map is None) == (self.space_frame is None):
            raise ValueError("give exactly one of space_map or space_frame")
        d = self.time_scale.arity_in
        object.__setattr__(self, "dim_space", d)
        if self.space_map is not None and self.space_map.out_shape != (d,):
            raise ValueError("space_map must map R^D to R^D")
        if self.space_frame is not None and self.space_frame.out_shape != (d, d):
            raise ValueError("space_frame must be a D x D field")

    @property
    def max_order(self) -> int:
        space = self.space_map.max_order - 1 if self.space_map is not None else self.space_frame.max_order
        return min(space, self.time_scale.max_order)

    def jet(self, x, order: int) -> Jet:
        """Vielbein jet in spacetime variables (time first) at spatial points ``x``."""
        X = spacetime_seed(x, order + (1 if self.space_map is not None else 0))
        return self._jet_from_seed(X, order)

    def _jet_from_seed(self, X: Jet, order: int) -> Jet:
        d = self.dim_space
        f = self.time_scale.jet(X).truncate(order)
        if self.space_map is not None:
            e = self.space_map.jet(X).grad().truncate(order)
        else:
            e = self.space_frame.jet(X.truncate(order))
            zero_col = Jet.constant(np.zeros(e.shape[:-1] + (1,)), e.nvar, e.order)
            e = Jet.concatenate([zero_col, e], axis=-1)
        zero_row = Jet.constant(np.zeros(f.shape + (d,)), f.nvar, order)
        top = Jet.concatenate([f.reshape_value(f.shape + (1,)), zero_row], axis=-1)
        return Jet.concatenate([top.reshape_value(f.shape + (1, d + 1)), e], axis=-2)

    def vielbein(self, x) -> np.ndarray:
        E = self.jet(_spatial(x, self.dim_space), 0).val
        _check_frame(E)
        return E

    def inverse_vielbein(self, x) -> np.ndarray:
        return np.linalg.inv(self.vielbein(x))


def _spatial(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] == d + 1:
        return x[..., 1:]
    if x.shape[-1] == d:
        return x
    raise ValueError(f"expected a point with {d} (space) or {d + 1} (spacetime) coordinates")


def spacetime_seed(x, order: int) -> Jet:
    """Seed spatial points as variables 1..D of a (D+1)-variable jet."""
    x = np.asarray(x, dtype=float)
    return Jet.variable(x, order, nvar=x.shape[-1] + 1, offset=1)


def _check_frame(E: np.ndarray) -> None:
    if np.any(E[..., 0, 0] <= 0):
        raise DegenerateFrame("time scale f(Q) must be positive")
    dets = np.linalg.det(E[..., 1:, 1:])
    if np.any(~np.isfinite(dets)) or np.any(np.abs(dets) < 1e-300):
        raise DegenerateFrame("space block of the frame is singular")


# -- Levi-Civita geometry -------------------------------------------------------


def christoffel_jet(g: Jet) -> Jet:
    """Levi-Civita connection as a jet one order below the metric jet ``g``."""
    ginv = inv(g.truncate(g.order - 1))
    dg = g.grad()  # dg[s, m, l] = d_l g_sm
    k = dg + dg.permute([0, 2, 1]) - dg.permute([2, 1, 0])
    # k[s, m, l] = d_l g_sm + d_m g_sl - d_s g_lm  -> reorder to [l, m, s]
    k = k.permute([2, 1, 0])
    return einsum2("...ns,...lms->...lmn", ginv, k) * 0.5


def ricci_from_connection(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """Ricci tensor ``R_sn = R^r_{s r n}`` of a (possibly torsionful) connection.

    ``dgamma[..., a, b, c, d]`` is the derivative of ``gamma[a, b, c]`` along
    coordinate ``d``.
    """
    term1 = np.einsum("...nsrr->...sn", dgamma)
    term2 = np.einsum("...rsrn->...sn", dgamma)
    trace = np.einsum("...rtr->...t", gamma)
    term3 = np.einsum("...t,...nst->...sn", trace, gamma)
    term4 = np.einsum("...ntr,...rst->...sn", gamma, gamma)
    return term1 - term2 + term3 - term4


def riemann_from_connection(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """Full tensor ``R[r, s, m, n]`` = d_m G_ns^r - d_n G_ms^r + G_mt^r G_ns^t - G_nt^r G_ms^t."""
    a = np.einsum("...nsrm->...rsmn", dgamma)
    b = np.einsum("...msrn->...rsmn", dgamma)
    c = np.einsum("...mtr,...nst->...rsmn", gamma, gamma)
    return a - b + c - np.swapaxes(c, -1, -2)


def _scalar(ginv: np.ndarray, gamma_jet: Jet) -> np.ndarray:
    ric = ricci_from_connection(gamma_jet.val, gamma_jet.derivs[0])
    return np.einsum("...sn,...sn->...", ginv, ric)


def scalar_curvature_jet(g: Jet) -> np.ndarray:
    """Scalar curvature of the Levi-Civita connection from an order >= 2 metric jet."""
    gamma = christoffel_jet(g)
    return _scalar(np.linalg.inv(g.val), gamma)


def christoffel(metric: MetricField, x) -> np.ndarray:
    """Levi-Civita symbols ``gamma[l, m, n]`` of ``metric`` at ``x``."""
    g = metric.local_jet(np.asarray(x, dtype=float), 1)
    return christoffel_jet(g).val


def riemann_scalar(metric: MetricField, x) -> float | np.ndarray:
    """Scalar curvature ``g^{lm} R_lm`` of the Levi-Civita connection."""
    g = metric.local_jet(np.asarray(x, dtype=float), 2)
    return scalar_curvature_jet(g)


def riemann_tensor(metric: MetricField, x) -> np.ndarray:
    g = metric.local_jet(np.asarray(x, dtype=float), 2)
    gamma = christoffel_jet(g)
    return riemann_from_connection(gamma.val, gamma.derivs[0])


# -- frame geometry -------------------------------------------------------------


def _pad_time(jet: Jet, naxes: int) -> Jet:
    """Embed spatial tensor axes (the last ``naxes``) into spacetime with zero time slots."""
    for ax in range(jet.ndim - naxes, jet.ndim):
        shape = list(jet.shape)
        shape[ax] = 1
        zero = Jet.constant(np.zeros(shape), jet.nvar, jet.order)
        jet = Jet.concatenate([zero, jet], axis=ax)
    return jet


def initial_christoffel_jet(metric: MetricField, q: Jet) -> Jet:
    """Levi-Civita symbols of ``metric`` (a field in q) composed with the jet ``q(Q)``."""
    local = metric.local_jet(q.val, q.order + 1)
    gamma_q = christoffel_jet(local)
    return compose([gamma_q.val, *gamma_q.derivs], q)


def _cartan_jet(frame: FrameField, x: np.ndarray, order: int, metric: MetricField | None):
    """Frame jet, spacetime metric jet and Cartan connection jet at spatial points ``x``."""
    d = frame.dim_space
    X = spacetime_seed(x, order + 2)
    E = frame._jet_from_seed(X, order + 1)
    _check_frame(E.val)
    Einv = inv(E.truncate(order))
    dE = E.grad()  # dE[i, m, l] = d_l E^i_m
    gamma = einsum2("...ni,...iml->...lmn", Einv, dE)
    if metric is not None:
        if frame.space_map is None:
            raise ValueError("a curved initial metric needs a holonomic space_map")
        q = frame.space_map.jet(X.truncate(order + 1)).truncate(order + 1)
        g_q = metric.jet(q).truncate(order + 1)
        gam_i = _pad_time(initial_christoffel_jet(metric, q.truncate(order)), 3)
        Et = E.truncate(order)
        t1 = einsum2("...jki,...jl->...lki", gam_i, Et)
        t2 = einsum2("...lki,...km->...lmi", t1, Et)
        gamma = gamma + einsum2("...ni,...lmi->...lmn", Einv, t2)
    else:
        g_q = Jet.constant(np.broadcast_to(np.eye(d), E.shape[:-2] + (d, d)), E.nvar, order + 1)
    return E, g_q, gamma


def spacetime_metric_jet(E: Jet, g_q: Jet, time_sign: float = 1.0) -> Jet:
    """``E^T diag(time_sign, g) E`` as a jet."""
    d = g_q.shape[-1]
    order = min(E.order, g_q.order)
    eta = _pad_time(g_q.truncate(order), 2)
    corner = np.zeros(eta.shape)
    corner[..., 0, 0] = time_sign
    eta = eta + Jet.constant(corner, eta.nvar, order)
    tmp = einsum2("...ij,...jm->...im", eta, E.truncate(order))
    return einsum2("...il,...im->...lm", E.truncate(order), tmp)


def cartan_connection(frame: FrameField, X, metric: MetricField | None = None) -> ConnectionField:
    """Affine connection ``E_I^N (d_L E^I_M + Gamma^I_JK E^J_L E^K_M)`` of the frame.

    Without ``metric`` the initial coordinates are taken as Cartesian and
    the connection reduces to ``E^{-1} dE``.
    """
    x = _spatial(X, frame.dim_space)
    _, _, gamma = _cartan_jet(frame, x, 0, metric)
    return ConnectionField(frame.dim_space + 1, gamma.val, torsion_flag=True)


def torsion_contracted(frame: FrameField, X, metric: MetricField | None = None) -> np.ndarray:
    """Spatial components of ``S_L = S_{L M}^M`` with ``S = (Gamma - Gamma^T) / 2``."""
    conn = cartan_connection(frame, X, metric)
    s = np.einsum("...lmm->...l", conn.torsion())
    return s[..., 1:]


def cartan_scalar(frame: FrameField, metric: MetricField | None, X, time_sign: float = 1.0) -> float | np.ndarray:
    """Curvature scalar of the Cartan connection contracted with the spacetime metric."""
    x = _spatial(X, frame.dim_space)
    E, g_q, gamma = _cartan_jet(frame, x, 1, metric)
    G = spacetime_metric_jet(E.truncate(1), g_q.truncate(1), time_sign)
    return _scalar(np.linalg.inv(G.val), gamma)


def spacetime_riemann_scalar(frame: FrameField, metric: MetricField | None, X, time_sign: float = 1.0):
    """Levi-Civita scalar curvature of the spacetime metric induced by the frame."""
    x = _spatial(X, frame.dim_space)
    E, g_q, _ = _cartan_jet(frame, x, 1, metric)
    G = spacetime_metric_jet(E, g_q, time_sign)
    return scalar_curvature_jet(G)


@dataclass(frozen=True)
class FrameGeometry:
    """Torsion and curvature data of a frame at a batch of points."""

    torsion: np.ndarray  # spacetime covector S_L
    torsion_squared: np.ndarray  # G^{LM} S_L S_M
    cartan_scalar: np.ndarray
    riemann_scalar: np.ndarray
    time_scale: np.ndarray


def frame_geometry(frame: FrameField, metric: MetricField | None, x, time_sign: float = 1.0) -> FrameGeometry:
    """Everything the curvature-torsion form of the quantum potential needs, in one pass."""
    x = _spatial(x, frame.dim_space)
    E, g_q, gamma = _cartan_jet(frame, x, 1, metric)
    G = spacetime_metric_jet(E, g_q, time_sign)
    Ginv = np.linalg.inv(G.val)
    tors = 0.5 * (gamma.val - np.swapaxes(gamma.val, -3, -2))
    s = np.einsum("...lmm->...l", tors)
    return FrameGeometry(
        torsion=s,
        torsion_squared=np.einsum("...lm,...l,...m->...", Ginv, s, s),
        cartan_scalar=_scalar(Ginv, gamma),
        riemann_scalar=scalar_curvature_jet(G),
        time_scale=E.val[..., 0, 0],
    )


def schwarz_residual(field: SmoothMap, x) -> float:
    """Largest antisymmetric part ``|d_m e^i_l - d_l e^i_m|`` of the frame coefficients.

    ``field`` is either a map ``q(Q)`` (its jacobian is the frame) or a raw
    ``D x D`` coefficient field ``e^i_l(Q)``.
    """
    d = field.arity_in
    if field.out_shape == (d,):
        de = field.hessian(x)
    elif field.out_shape == (d, d):
        de = field.jacobian(x)
    else:
        raise ValueError("schwarz_residual needs a map R^D -> R^D or a D x D frame field")
    return float(np.max(np.abs(de - np.swapaxes(de, -1, -2)), initial=0.0))
