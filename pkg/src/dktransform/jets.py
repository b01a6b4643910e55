"""Forward-mode differentiation with truncated multivariate jets.

A :class:`Jet` carries the value of an array-valued quantity together with
its first, second and third partial derivatives with respect to a fixed set
of ``n`` seed variables.  Derivative arrays hang off the value shape as
trailing axes, so ``d2[..., i, j]`` is the second derivative with respect to
variables ``i`` and ``j``.  This is the multivariate generalisation of dual
numbers (hyper-dual numbers truncated at order three) and is exact up to
rounding.

Arithmetic between jets of different order truncates to the lower order.
"""

from __future__ import annotations

import numbers
from string import ascii_uppercase

import numpy as np

MAX_ORDER = 3

_DERIV_LETTERS = "XYZ"


def _sym3(a: np.ndarray) -> np.ndarray:
    # a[..., i, j, k] holds a term of the form u_ij v_k
    return a + np.swapaxes(a, -1, -2) + np.moveaxis(a, -1, -3)


class Jet:
    """Value plus partial derivatives up to a fixed order."""

    __slots__ = ("val", "derivs", "nvar")

    __array_priority__ = 100

    def __init__(self, val, derivs=(), nvar=None):
        self.val = np.asarray(val, dtype=float) if not np.iscomplexobj(val) else np.asarray(val)
        self.derivs = tuple(derivs)
        if nvar is None:
            if not self.derivs:
                raise ValueError("nvar is required for an order-0 jet")
            nvar = self.derivs[0].shape[-1]
        self.nvar = int(nvar)
        if len(self.derivs) > MAX_ORDER:
            raise ValueError(f"jets are truncated at order {MAX_ORDER}")

    # -- construction -------------------------------------------------------

    @classmethod
    def variable(cls, x, order: int = 2, nvar: int | None = None, offset: int = 0) -> "Jet":
        """Seed ``x[..., i]`` as independent variable ``offset + i``."""
        x = np.asarray(x, dtype=float)
        k = x.shape[-1]
        n = k if nvar is None else nvar
        seed = np.zeros((k, n))
        seed[np.arange(k), offset + np.arange(k)] = 1.0
        derivs = []
        if order >= 1:
            derivs.append(np.broadcast_to(seed, x.shape + (n,)).copy())
        for m in range(2, order + 1):
            derivs.append(np.zeros(x.shape + (n,) * m))
        return cls(x, derivs, n)

    @classmethod
    def constant(cls, c, nvar: int, order: int) -> "Jet":
        c = np.asarray(c, dtype=float)
        return cls(c, [np.zeros(c.shape + (nvar,) * m) for m in range(1, order + 1)], nvar)

    @property
    def order(self) -> int:
        return len(self.derivs)

    @property
    def shape(self) -> tuple:
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            return self
        return Jet(self.val, self.derivs[:order], self.nvar)

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, order={self.order}, nvar={self.nvar})"

    # -- structural ---------------------------------------------------------

    def _norm_index(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is Ellipsis for i in idx):
            pos = next(k for k, i in enumerate(idx) if i is Ellipsis)
            used = sum(1 for i in idx if i is not None and i is not Ellipsis)
            fill = (slice(None),) * (self.ndim - used)
            idx = idx[:pos] + fill + idx[pos + 1 :]
        return idx

    def __getitem__(self, idx) -> "Jet":
        idx = self._norm_index(idx)
        return Jet(self.val[idx], [d[idx] for d in self.derivs], self.nvar)

    def grad(self) -> "Jet":
        """Jet of the gradient; the derivative axis is appended to the value shape."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        return Jet(self.derivs[0], self.derivs[1:], self.nvar)

    def swap(self, a: int, b: int) -> "Jet":
        a %= self.ndim
        b %= self.ndim
        return Jet(np.swapaxes(self.val, a, b), [np.swapaxes(d, a, b) for d in self.derivs], self.nvar)

    @property
    def T(self) -> "Jet":
        return self.swap(-1, -2)

    def permute(self, perm) -> "Jet":
        """Permute the last ``len(perm)`` value axes; derivative axes stay put."""
        k = len(perm)
        lead = self.ndim - k
        axes = list(range(lead)) + [lead + p for p in perm]
        out = [np.transpose(self.val, axes)]
        for m, d in enumerate(self.derivs):
            out.append(np.transpose(d, axes + list(range(self.ndim, self.ndim + m + 1))))
        return Jet(out[0], out[1:], self.nvar)

    def reshape_value(self, shape) -> "Jet":
        shape = tuple(shape)
        return Jet(
            self.val.reshape(shape),
            [d.reshape(shape + d.shape[self.ndim :]) for d in self.derivs],
            self.nvar,
        )

    @staticmethod
    def stack(items, axis: int = 0) -> "Jet":
        items = list(items)
        order = min(j.order for j in items)
        items = [j.truncate(order) for j in items]
        ndim = items[0].ndim + 1
        axis %= ndim
        val = np.stack([j.val for j in items], axis=axis)
        derivs = [np.stack([j.derivs[m] for j in items], axis=axis) for m in range(order)]
        return Jet(val, derivs, items[0].nvar)

    @staticmethod
    def concatenate(items, axis: int = 0) -> "Jet":
        items = list(items)
        order = min(j.order for j in items)
        items = [j.truncate(order) for j in items]
        axis %= items[0].ndim
        val = np.concatenate([j.val for j in items], axis=axis)
        derivs = [np.concatenate([j.derivs[m] for j in items], axis=axis) for m in range(order)]
        return Jet(val, derivs, items[0].nvar)

    def broadcast_to(self, shape) -> "Jet":
        shape = tuple(shape)
        n = self.nvar
        return Jet(
            np.broadcast_to(self.val, shape).copy(),
            [np.broadcast_to(d, shape + (n,) * (m + 1)).copy() for m, d in enumerate(self.derivs)],
            n,
        )

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.nvar, self.order)

    def __neg__(self) -> "Jet":
        return Jet(-self.val, [-d for d in self.derivs], self.nvar)

    def __add__(self, other) -> "Jet":
        other = self._coerce(other)
        order = min(self.order, other.order)
        val = self.val + other.val
        derivs = [_bcast_add(self.derivs[m], other.derivs[m], self.val, other.val, m + 1) for m in range(order)]
        return Jet(val, derivs, self.nvar)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Jet":
        if isinstance(other, numbers.Number):
            return Jet(self.val * other, [d * other for d in self.derivs], self.nvar)
        return product(self, self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, numbers.Number):
            return self * (1.0 / other)
        return self * reciprocal(self._coerce(other))

    def __rtruediv__(self, other) -> "Jet":
        return reciprocal(self) * other

    def __pow__(self, p) -> "Jet":
        if isinstance(p, Jet):
            return exp(p * log(self))
        p = float(p)
        if p == 0.0:
            return Jet.constant(np.ones_like(self.val), self.nvar, self.order)
        if p.is_integer() and p > 0:
            x = self.val
            ip = int(p)
            d1 = ip * x ** (ip - 1)
            d2 = ip * (ip - 1) * x ** (ip - 2) if ip >= 2 else np.zeros_like(x)
            d3 = ip * (ip - 1) * (ip - 2) * x ** (ip - 3) if ip >= 3 else np.zeros_like(x)
            return apply(self, x**ip, d1, d2, d3)
        x = self.val
        return apply(
            self,
            x**p,
            p * x ** (p - 1),
            p * (p - 1) * x ** (p - 2),
            p * (p - 1) * (p - 2) * x ** (p - 3),
        )

    def __rpow__(self, base) -> "Jet":
        return exp(self * np.log(base))


def _bcast_add(da, db, va, vb, m):
    # derivative arrays broadcast over value axes only
    shape = np.broadcast_shapes(np.shape(va), np.shape(vb))
    n = da.shape[-1]
    return np.broadcast_to(da, shape + (n,) * m) + np.broadcast_to(db, shape + (n,) * m)


def _ex(a: np.ndarray, k: int) -> np.ndarray:
    return a.reshape(a.shape + (1,) * k)


def product(u: Jet, v: Jet) -> Jet:
    """Elementwise product by the Leibniz rule."""
    order = min(u.order, v.order)
    u0, v0 = u.val, v.val
    derivs = []
    if order >= 1:
        u1, v1 = u.derivs[0], v.derivs[0]
        derivs.append(u1 * _ex(v0, 1) + _ex(u0, 1) * v1)
    if order >= 2:
        u2, v2 = u.derivs[1], v.derivs[1]
        cross = u1[..., :, None] * v1[..., None, :]
        derivs.append(u2 * _ex(v0, 2) + cross + np.swapaxes(cross, -1, -2) + _ex(u0, 2) * v2)
    if order >= 3:
        u3, v3 = u.derivs[2], v.derivs[2]
        a = u2[..., :, :, None] * v1[..., None, None, :]
        b = v2[..., :, :, None] * u1[..., None, None, :]
        derivs.append(u3 * _ex(v0, 3) + _sym3(a) + _sym3(b) + _ex(u0, 3) * v3)
    return Jet(u0 * v0, derivs, u.nvar)


def apply(u: Jet, f0, f1, f2=None, f3=None) -> Jet:
    """Compose an elementwise scalar function with known derivatives onto ``u``."""
    derivs = []
    if u.order >= 1:
        u1 = u.derivs[0]
        derivs.append(_ex(f1, 1) * u1)
    if u.order >= 2:
        u2 = u.derivs[1]
        outer = u1[..., :, None] * u1[..., None, :]
        derivs.append(_ex(f2, 2) * outer + _ex(f1, 2) * u2)
    if u.order >= 3:
        u3 = u.derivs[2]
        triple = outer[..., :, :, None] * u1[..., None, None, :]
        mixed = _sym3(u2[..., :, :, None] * u1[..., None, None, :])
        derivs.append(_ex(f3, 3) * triple + _ex(f2, 3) * mixed + _ex(f1, 3) * u3)
    return Jet(f0, derivs, u.nvar)


def reciprocal(u: Jet) -> Jet:
    x = u.val
    if np.any(x == 0):
        raise ZeroDivisionError("jet division by a zero value")
    r = 1.0 / x
    return apply(u, r, -(r**2), 2 * r**3, -6 * r**4)


def exp(u):
    if not isinstance(u, Jet):
        return np.exp(u)
    e = np.exp(u.val)
    return apply(u, e, e, e, e)


def log(u):
    if not isinstance(u, Jet):
        return np.log(u)
    x = u.val
    r = 1.0 / x
    return apply(u, np.log(x), r, -(r**2), 2 * r**3)


def sin(u):
    if not isinstance(u, Jet):
        return np.sin(u)
    s, c = np.sin(u.val), np.cos(u.val)
    return apply(u, s, c, -s, -c)


def cos(u):
    if not isinstance(u, Jet):
        return np.cos(u)
    s, c = np.sin(u.val), np.cos(u.val)
    return apply(u, c, -s, -c, s)


def sqrt(u):
    if not isinstance(u, Jet):
        return np.sqrt(u)
    return u**0.5


# -- multilinear algebra ------------------------------------------------------


def _split(spec: str):
    lhs, out = spec.replace(" ", "").split("->")
    a, b = lhs.split(",")
    return a, b, out


def einsum2(spec: str, u, v) -> Jet:
    """Bilinear ``np.einsum`` of two jets (or a jet and a plain array).

    ``spec`` is written for the value arrays, e.g. ``"...ij,...jk->...ik"``;
    derivative axes are threaded through by the Leibniz rule.
    """
    if not isinstance(u, Jet) and not isinstance(v, Jet):
        return np.einsum(spec, u, v)
    ref = u if isinstance(u, Jet) else v
    if not isinstance(u, Jet):
        u = Jet.constant(u, ref.nvar, ref.order)
    if not isinstance(v, Jet):
        v = Jet.constant(v, ref.nvar, ref.order)
    a, b, out = _split(spec)
    order = min(u.order, v.order)
    X, Y, Z = _DERIV_LETTERS
    U = [u.val, *u.derivs]
    V = [v.val, *v.derivs]

    def term(i, j, letters_u, letters_v, letters_out):
        return np.einsum(f"{a}{letters_u},{b}{letters_v}->{out}{letters_out}", U[i], V[j])

    val = np.einsum(spec, u.val, v.val)
    derivs = []
    if order >= 1:
        derivs.append(term(1, 0, X, "", X) + term(0, 1, "", X, X))
    if order >= 2:
        derivs.append(
            term(2, 0, X + Y, "", X + Y)
            + term(1, 1, X, Y, X + Y)
            + term(1, 1, Y, X, X + Y)
            + term(0, 2, "", X + Y, X + Y)
        )
    if order >= 3:
        o = X + Y + Z
        derivs.append(
            term(3, 0, o, "", o)
            + term(2, 1, X + Y, Z, o)
            + term(2, 1, X + Z, Y, o)
            + term(2, 1, Y + Z, X, o)
            + term(1, 2, X, Y + Z, o)
            + term(1, 2, Y, X + Z, o)
            + term(1, 2, Z, X + Y, o)
            + term(0, 3, "", o, o)
        )
    return Jet(val, derivs, ref.nvar)


def matmul(u, v) -> Jet:
    return einsum2("...ij,...jk->...ik", u, v)


def inv(m: Jet) -> Jet:
    """Matrix inverse over the last two value axes, derivatives order by order."""
    p0 = np.linalg.inv(m.val)
    derivs = []
    if m.order >= 1:
        m1 = m.derivs[0]
        p1 = -_left(p0, _right(m1, p0))
        derivs.append(p1)
    if m.order >= 2:
        m2 = m.derivs[1]
        t = _right(m2, p0) + _ein("ijX,jkY->ikXY", m1, p1) + _ein("ijY,jkX->ikXY", m1, p1)
        p2 = -_left(p0, t)
        derivs.append(p2)
    if m.order >= 3:
        m3 = m.derivs[2]
        t = _right(m3, p0)
        t = t + _ein("ijXY,jkZ->ikXYZ", m2, p1)
        t = t + _ein("ijXZ,jkY->ikXYZ", m2, p1)
        t = t + _ein("ijYZ,jkX->ikXYZ", m2, p1)
        t = t + _ein("ijX,jkYZ->ikXYZ", m1, p2)
        t = t + _ein("ijY,jkXZ->ikXYZ", m1, p2)
        t = t + _ein("ijZ,jkXY->ikXYZ", m1, p2)
        p3 = -_left(p0, t)
        derivs.append(p3)
    return Jet(p0, derivs, m.nvar)


def _ein(spec: str, a, b):
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    return np.einsum(f"...{sa},...{sb}->...{out}", a, b)


def _right(a: np.ndarray, p0: np.ndarray) -> np.ndarray:
    # (a with trailing derivative axes) @ p0
    k = a.ndim - p0.ndim
    letters = ascii_uppercase[:k]
    return np.einsum(f"...ij{letters},...jk->...ik{letters}", a, p0)


def _left(p0: np.ndarray, a: np.ndarray) -> np.ndarray:
    # p0 @ (a with trailing derivative axes)
    k = a.ndim - p0.ndim
    letters = ascii_uppercase[:k]
    return np.einsum(f"...ij,...jk{letters}->...ik{letters}", p0, a)


def det(m: Jet) -> Jet:
    """Determinant of small matrices via cofactor expansion on jets."""
    n = m.shape[-1]
    if n == 1:
        return m[..., 0, 0]
    if n == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    total = None
    for j in range(n):
        rows = [r for r in range(1, n)]
        cols = [c for c in range(n) if c != j]
        minor = Jet.stack([Jet.stack([m[..., r, c] for c in cols], axis=-1) for r in rows], axis=-2)
        term = m[..., 0, j] * det(minor)
        term = term if j % 2 == 0 else -term
        total = term if total is None else total + term
    return total


def compose(outer_derivs, inner: Jet) -> Jet:
    """Chain rule for ``h(u(x))`` given the derivative tensors of ``h`` at ``u.val``.

    ``outer_derivs`` is ``[h0, h1, h2, h3]`` with ``h_k`` of shape
    ``batch + out + (m,) * k`` where ``m`` is the length of the last axis of
    ``inner`` (the inner jet has value shape ``batch + (m,)``).
    """
    h = list(outer_derivs)
    h0 = np.asarray(h[0])
    nb = inner.ndim - 1
    order = min(inner.order, len(h) - 1)
    out_nd = h0.ndim - nb
    o = "".join(ascii_uppercase[10 : 10 + out_nd])

    def ein(spec, *ops):
        return np.einsum(spec, *ops)

    derivs = []
    if order >= 1:
        u1 = inner.derivs[0]
        derivs.append(ein(f"...{o}a,...ax->...{o}x", h[1], u1))
    if order >= 2:
        u2 = inner.derivs[1]
        derivs.append(
            ein(f"...{o}ab,...ax,...by->...{o}xy", h[2], u1, u1)
            + ein(f"...{o}a,...axy->...{o}xy", h[1], u2)
        )
    if order >= 3:
        u3 = inner.derivs[2]
        mixed = ein(f"...{o}ab,...axy,...bz->...{o}xyz", h[2], u2, u1)
        derivs.append(
            ein(f"...{o}abc,...ax,...by,...cz->...{o}xyz", h[3], u1, u1, u1)
            + mixed
            + np.swapaxes(mixed, -1, -2)
            + np.moveaxis(mixed, -1, -3)
            + ein(f"...{o}a,...axyz->...{o}xyz", h[1], u3)
        )
    return Jet(h0, derivs, inner.nvar)
