import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from dktransform import MetricField, SystemSpec, TransformSpec, expression_map, scalar_map  # noqa: E402
from dktransform.expressions import coords, exp, sin  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SQRT40 = float(np.sqrt(40.0))


def flat(dim: int) -> MetricField:
    names = [f"q{i + 1}" for i in range(dim)]
    return MetricField(expression_map([["1" if i == j else "0" for j in range(dim)] for i in range(dim)], names))


def coulomb_system(hbar: float = 1.0, q_min: float = 1e-6, length: float = 40.0, alpha: float = 1.0) -> SystemSpec:
    return SystemSpec(flat(1), scalar_map(f"-{alpha}/q1", ["q1"]), mass=1.0, hbar=hbar, domain=((q_min, length),))


def coulomb_transform(energy: float = -0.125, exponent: int = -1, q_min: float = 1e-6, length: float = 40.0) -> TransformSpec:
    return TransformSpec(
        expression_map(["Q1^2"], ["Q1"]),
        scalar_map("4*Q1^2", ["Q1"]),
        energy=energy,
        inverse_map=expression_map(["sqrt(q1)"], ["q1"]),
        conformal_exponent=exponent,
        domain=((float(np.sqrt(q_min)), float(np.sqrt(length))),),
    )


def identity_transform(dim: int = 1, energy: float = 0.0, scale: str = "1") -> TransformSpec:
    Q = [f"Q{i + 1}" for i in range(dim)]
    q = [f"q{i + 1}" for i in range(dim)]
    return TransformSpec(expression_map(Q, Q), scalar_map(scale, Q), energy=energy, inverse_map=expression_map(q, q))


def random_case(rng: np.random.Generator, dim: int, hbar: float = 1.0, mass: float = 1.3, energy: float = 0.7):
    """Near-identity holonomic map, positive exponential time scale, curved initial metric.

    Returns ``(init, tr, strings)`` where ``strings`` holds the expression text
    of every field so an independent oracle can rebuild them.
    """
    Q = coords("Q", dim)
    q = coords("q", dim)
    comps = []
    for i in range(dim):
        c = Q[i]
        for j in range(dim):
            c = c + 0.15 * rng.normal() * sin(rng.normal() * Q[j] + rng.normal()) + 0.05 * rng.normal() * Q[j] * Q[(j + 1) % dim]
        comps.append(c)
    f = exp(sum((0.3 * rng.normal() * Q[j] for j in range(1, dim)), 0.3 * rng.normal() * Q[0]) + 0.1 * rng.normal() * Q[0] * Q[0])
    M = [[0.3 * rng.normal() * sin(rng.normal() * q[j] + rng.normal()) for j in range(dim)] for _ in range(dim)]
    g = [[(1.0 if i == j else 0.0) + sum((M[i][k] * M[j][k] for k in range(dim)), 0.0) for j in range(dim)] for i in range(dim)]
    V = sum((0.5 * q[i] * q[i] for i in range(dim)), 0.0)
    Qn = [v.name for v in Q]
    qn = [v.name for v in q]
    smap = expression_map(comps, Qn)
    fmap = scalar_map(f, Qn)
    gmap = expression_map(g, qn)
    init = SystemSpec(MetricField(gmap), scalar_map(V, qn), mass=mass, hbar=hbar)
    tr = TransformSpec(smap, fmap, energy=energy)
    strings = {"q": smap.to_strings(), "f": fmap.to_strings(), "g": gmap.to_strings(), "V": scalar_map(V, qn).to_strings()}
    return init, tr, strings


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
