"""Smooth multivariate maps with exact first, second and third derivatives."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import finite_diff
from .expressions import Expr, parse, wrap
from .jets import MAX_ORDER, Jet, compose


class SmoothMap:
    """A smooth map ``R^n -> R^out_shape``.

    Subclasses provide :meth:`local_jet`, the value and derivatives with
    respect to the map's own inputs at a batch of points.  Everything else
    (evaluation, jacobians, hessians and composition with other jets) is
    derived from it.
    """

    exact = True

    def __init__(self, arity_in: int, out_shape: tuple = (), max_order: int = MAX_ORDER):
        self.arity_in = int(arity_in)
        self.out_shape = tuple(out_shape)
        self.max_order = int(max_order)

    @property
    def arity_out(self) -> int:
        return int(np.prod(self.out_shape, dtype=int))

    def local_jet(self, x: np.ndarray, order: int) -> Jet:
        raise NotImplementedError

    def _check_order(self, order):
        if order > self.max_order:
            raise ValueError(f"{type(self).__name__} provides derivatives up to order {self.max_order}, not {order}")

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.arity_in:
            raise ValueError(f"expected points with {self.arity_in} coordinates, got shape {x.shape}")
        return x

    def eval(self, x) -> np.ndarray:
        return self.local_jet(self._points(x), 0).val

    __call__ = eval

    def jacobian(self, x) -> np.ndarray:
        """``out_shape + (n,)`` array of first derivatives."""
        self._check_order(1)
        return self.local_jet(self._points(x), 1).derivs[0]

    def hessian(self, x) -> np.ndarray:
        """``out_shape + (n, n)`` array of second derivatives."""
        self._check_order(2)
        return self.local_jet(self._points(x), 2).derivs[1]

    def jet(self, inner: Jet) -> Jet:
        """Evaluate on a jet whose last value axis holds this map's inputs."""
        self._check_order(inner.order)
        local = self.local_jet(inner.val, inner.order)
        return compose([local.val, *local.derivs], inner)


class ExpressionMap(SmoothMap):
    """Map whose components are expression trees; derivatives are exact."""

    def __init__(self, components, variables: Sequence[str], out_shape: tuple | None = None):
        arr = np.empty(np.shape(components) if out_shape is None else out_shape, dtype=object)
        flat = list(np.ravel(np.array(components, dtype=object)))
        if len(flat) != arr.size:
            raise ValueError("component count does not match out_shape")
        arr.ravel()[:] = [wrap(c) for c in flat]
        self.components = arr
        self.variable_names = list(variables)
        super().__init__(len(self.variable_names), arr.shape)
        unknown = set().union(*(c.variables() for c in flat)) - set(self.variable_names)
        if unknown:
            raise ValueError(f"components reference unknown variables {sorted(unknown)}")

    @classmethod
    def parse(cls, texts, variables, parameters=None, field=None) -> "ExpressionMap":
        arr = np.array(texts, dtype=object)
        exprs = [parse(t, variables, parameters, field=field) for t in arr.ravel()]
        return cls(np.array(exprs, dtype=object).reshape(arr.shape), variables, arr.shape)

    def _evaluate(self, env, batch_shape, template: Jet | None):
        values = []
        for c in self.components.ravel():
            v = c.evaluate(env)
            if template is None:
                v = np.broadcast_to(np.asarray(v, dtype=float), batch_shape)
            elif not isinstance(v, Jet):
                v = Jet.constant(np.broadcast_to(np.asarray(v, dtype=float), batch_shape), template.nvar, template.order)
            values.append(v)
        if template is None:
            out = np.stack(values, axis=-1) if values else np.zeros(batch_shape + (0,))
            return out.reshape(batch_shape + self.out_shape)
        out = Jet.stack(values, axis=-1)
        return out.reshape_value(batch_shape + self.out_shape)

    def local_jet(self, x, order):
        x = np.asarray(x, dtype=float)
        self._check_order(order)
        if order == 0:
            env = {name: x[..., i] for i, name in enumerate(self.variable_names)}
            return Jet(self._evaluate(env, x.shape[:-1], None), (), self.arity_in)
        seed = Jet.variable(x, order)
        return self.jet(seed)

    def jet(self, inner: Jet) -> Jet:
        self._check_order(inner.order)
        env = {name: inner[..., i] for i, name in enumerate(self.variable_names)}
        return self._evaluate(env, inner.shape[:-1], inner)

    def to_strings(self):
        return np.vectorize(lambda e: e.to_string(), otypes=[object])(self.components).tolist()

    def __repr__(self) -> str:
        return f"ExpressionMap({self.to_strings()!r}, variables={self.variable_names!r})"


class JetMap(SmoothMap):
    """Map defined by a function returning its local jet.

    ``fn(x, order)`` receives a batch of points (shape ``batch + (n,)``) and
    returns a jet in the map's own input variables with at least ``order``
    derivatives.  Used for composite fields built by the transformation laws.
    """

    def __init__(self, fn: Callable[[np.ndarray, int], Jet], arity_in: int, out_shape: tuple = (), max_order: int = MAX_ORDER):
        super().__init__(arity_in, out_shape, max_order)
        self.fn = fn

    def local_jet(self, x, order):
        self._check_order(order)
        return self.fn(np.asarray(x, dtype=float), order).truncate(order)


class CallableMap(SmoothMap):
    """Opaque numpy callable; derivatives come from finite differences only."""

    exact = False

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], arity_in: int, out_shape: tuple = ()):
        super().__init__(arity_in, out_shape, max_order=2)
        self.fn = fn

    def local_jet(self, x, order):
        self._check_order(order)
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        pts = x.reshape(-1, self.arity_in)
        vals, d1, d2 = [], [], []
        for p in pts:
            vals.append(np.asarray(self.fn(p), dtype=float).reshape(self.out_shape))
            if order >= 1:
                d1.append(finite_diff.jacobian(self.fn, p).reshape(self.out_shape + (self.arity_in,)))
            if order >= 2:
                d2.append(finite_diff.hessian(self.fn, p).reshape(self.out_shape + (self.arity_in,) * 2))
        reshape = lambda a, k: np.asarray(a).reshape(batch + self.out_shape + (self.arity_in,) * k)  # noqa: E731
        derivs = [reshape(d1, 1)] if order >= 1 else []
        if order >= 2:
            derivs.append(reshape(d2, 2))
        return Jet(reshape(vals, 0), derivs, self.arity_in)


def constant_map(value, arity_in: int) -> ExpressionMap:
    value = np.asarray(value, dtype=float)
    names = [f"x{i + 1}" for i in range(arity_in)]
    comps = np.vectorize(lambda v: wrap(float(v)), otypes=[object])(value) if value.ndim else wrap(float(value))
    if value.ndim == 0:
        return ExpressionMap([comps], names, ())
    return ExpressionMap(comps, names, value.shape)


def expression_map(components, variables, out_shape=None) -> ExpressionMap:
    """Build a map from expression trees or strings."""
    arr = np.array(components, dtype=object)
    if out_shape is None:
        out_shape = arr.shape
    exprs = [c if isinstance(c, Expr) else (parse(c, variables) if isinstance(c, str) else wrap(c)) for c in arr.ravel()]
    return ExpressionMap(np.array(exprs, dtype=object).reshape(arr.shape), variables, tuple(out_shape))


def scalar_map(component, variables) -> ExpressionMap:
    c = component if isinstance(component, Expr) else (parse(component, variables) if isinstance(component, str) else wrap(component))
    return ExpressionMap(np.array([c], dtype=object).reshape(()), variables, ())
