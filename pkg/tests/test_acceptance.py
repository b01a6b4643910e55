"""End-to-end acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities, stated tolerance and runtime, then asserts.  Run with
``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""

import json
import sys
import time

import numpy as np
import pytest

from conftest import coulomb_system, coulomb_transform, identity_transform, random_case
from dktransform import (
    IntegratorConfig,
    auto_conformal_exponent,
    correspondence_check,
    discretize_hamiltonian,
    expression_map,
    finite_diff,
    resolvent_dk_check,
    zero_mode_spectral_check,
)
from dktransform.cli import EXIT_INVALID, EXIT_PASS, main
from dktransform.diffgeo import schwarz_residual
from dktransform.expressions import coords, cos, sin
from dktransform.quantum import Grid1D, default_probe_pairs
from dktransform.scenario import bundled_scenario_path
from dktransform.transform import quantum_correction_direct, quantum_potential_geometric, sample_grid

SQRT_QMIN, SQRT_L = 1e-3, float(np.sqrt(40.0))


def report(capsys, number, title, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}; runtime {elapsed:.1f} s (limit {limit:g} s)")
    return ok


def coulomb_grids(n):
    return Grid1D(1e-6, 40.0, n), Grid1D(SQRT_QMIN, SQRT_L, n)


# -- random charts -------------------------------------------------------------------------


def polynomial_chart(rng, X):
    d = len(X)
    out = []
    for i in range(d):
        j, k = rng.integers(d), rng.integers(d)
        out.append(X[i] + 0.2 * rng.normal() * X[j] * X[k] + 0.05 * rng.normal() * X[j] * X[j] * X[j])
    return out


def trig_chart(rng, X):
    d = len(X)
    out = []
    for i in range(d):
        j = rng.integers(d)
        out.append(X[i] + 0.2 * rng.normal() * sin(rng.normal() * X[j] + rng.normal()) + 0.1 * rng.normal() * cos(X[(i + 1) % d]))
    return out


def random_holonomic_map(rng, dim):
    X = coords("Q", dim)
    charts = [polynomial_chart, trig_chart]
    Y = list(X)
    for _ in range(rng.integers(2, 4)):
        Y = charts[rng.integers(2)](rng, Y)
    return expression_map(Y, [x.name for x in X])


def random_non_gradient_frame(rng, dim):
    """Frame ``1 + N`` whose ``N`` has a curl of at least 0.5 everywhere; no map has it as jacobian."""
    names = [f"Q{i + 1}" for i in range(dim)]
    comps = [["1" if i == l else "0" for l in range(dim)] for i in range(dim)]
    comps[0][1] = f"{rng.uniform(0.5, 2.0)}*Q1"
    comps[1][0] = f"{0.3 * rng.normal()}*exp(Q2)"
    comps[dim - 1][dim - 1] = f"1 + {0.2 * rng.normal()}*sin(Q{dim})"
    return expression_map(comps, names)


# -- criteria ----------------------------------------------------------------------------------


def test_criterion_1_holonomy_gate(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_good = 0.0
    for k in range(10):
        dim = [1, 2, 3][k % 3]
        m = random_holonomic_map(rng, dim)
        pts = rng.uniform(-1.0, 1.0, size=(100, dim))
        worst_good = max(worst_good, schwarz_residual(m, pts))
    least_bad = np.inf
    for k in range(5):
        frame = random_non_gradient_frame(rng, 2 + k % 2)
        pts = rng.uniform(-1.0, 1.0, size=(100, frame.arity_in))
        least_bad = min(least_bad, min(schwarz_residual(frame, p) for p in pts))
    elapsed = time.perf_counter() - t0
    ok = worst_good < 1e-8 and least_bad > 1e-2
    detail = f"holonomic max {worst_good:.2e} < 1e-8, non-gradient min {least_bad:.2e} > 1e-2"
    assert report(capsys, 1, "holonomy gate", ok, detail, elapsed, 10)


def test_criterion_2_two_dimensional_vanishing(capsys):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    pts = sample_grid(((-0.5, 0.5), (-0.5, 0.5)), 5)
    for _ in range(20):
        init, tr, _ = random_case(rng, 2, hbar=rng.uniform(0.5, 2.0))
        worst = max(worst, float(np.max(np.abs(quantum_correction_direct(init, tr).eval(pts)))))
    elapsed = time.perf_counter() - t0
    detail = f"max |V_qu| over 20 cases x 25 points {worst:.2e} < 1e-10"
    assert report(capsys, 2, "D=2 vanishing", worst < 1e-10, detail, elapsed, 30)


def test_criterion_3_direct_equals_geometric(capsys):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst = 0.0
    dims = [1, 3, 4]
    for k in range(100):
        dim = dims[k % 3]
        init, tr, _ = random_case(rng, dim, hbar=rng.uniform(0.5, 2.0), mass=rng.uniform(0.5, 2.0))
        x = 0.3 * rng.normal(size=dim)
        direct = float(quantum_correction_direct(init, tr, "metric_trace").eval(x))
        geo = float(quantum_potential_geometric(init, tr).eval(x))
        scale = max(abs(direct), abs(geo))
        if scale > 1e-12:
            worst = max(worst, abs(direct - geo) / scale)
    elapsed = time.perf_counter() - t0
    detail = f"max relative difference {worst:.2e} < 1e-8 over 100 cases (contraction metric_trace)"
    assert report(capsys, 3, "direct vs geometric correction", worst < 1e-8, detail, elapsed, 300)


def test_criterion_4_classical_correspondence(capsys):
    t0 = time.perf_counter()
    init = coulomb_system(q_min=0.0)
    cfg = IntegratorConfig(walls="reflect")
    chosen, reports = auto_conformal_exponent(init, coulomb_transform(), [8.0], [0.0], 16 * np.pi, cfg)
    dev = reports[chosen].deviation if chosen is not None else np.inf
    # identity control over the part of the orbit before the collision
    control = correspondence_check(init, identity_transform(1, energy=-0.125), None, [8.0], [0.0], 24.0).deviation
    elapsed = time.perf_counter() - t0
    ok = dev < 1e-6 and control < 1e-9
    detail = f"auto exponent {chosen}, deviation {dev:.2e} < 1e-6 (other exponent {reports[1].deviation:.2e}), identity control {control:.2e} < 1e-9"
    assert report(capsys, 4, "classical correspondence", ok, detail, elapsed, 30)


def test_criterion_5_zero_modes(capsys):
    t0 = time.perf_counter()
    init, tr = coulomb_system(), coulomb_transform()
    r4 = zero_mode_spectral_check(init, tr, *coulomb_grids(4000), 3)
    r8 = zero_mode_spectral_check(init, tr, *coulomb_grids(8000), 3)
    bare = zero_mode_spectral_check(init, tr, *coulomb_grids(4000), 3, quantum_correction=False)
    elapsed = time.perf_counter() - t0
    ratios = np.abs(r4.offsets) / np.abs(r8.offsets)
    degrade = bare.max_relative_offset / r4.max_relative_offset
    ok = r4.max_relative_offset < 1e-4 and bool(np.all(ratios > 3.5)) and degrade >= 10
    detail = (
        f"max offset/|E1| {r4.max_relative_offset:.2e} < 1e-4 at n=4000, "
        f"refinement ratios {', '.join(f'{x:.2f}' for x in ratios)} (O(h^2) = 4), "
        f"without correction {degrade:.0f}x worse (>= 10x)"
    )
    assert report(capsys, 5, "spectral zero modes", ok, detail, elapsed, 120)


def test_criterion_6_resolvent_identity(capsys):
    t0 = time.perf_counter()
    init = coulomb_system()
    gi, gf = coulomb_grids(4000)
    e1 = float(discretize_hamiltonian(init, gi).eigenvalues(1)[0])
    energy = 2 * e1
    pairs = default_probe_pairs((gi.x_min, gi.x_max))
    ident = resolvent_dk_check(init, identity_transform(1), energy, pairs, gi, gi, refine=False).max_relative_error
    main_rep = resolvent_dk_check(init, coulomb_transform(), energy, pairs, gi, gf)
    conv = list(main_rep.grid_convergence.values())
    perturbed = [
        resolvent_dk_check(init, coulomb_transform(), energy, pairs, gi, gf, prefactor_exponent=0.25 + s, refine=False).max_relative_error
        for s in (-0.25, 0.25)
    ]
    elapsed = time.perf_counter() - t0
    err = main_rep.max_relative_error
    sens = min(perturbed) / err
    ok = ident < 1e-10 and err < 1e-3 and conv[1] < conv[0] and sens >= 100
    detail = (
        f"identity {ident:.1e} < 1e-10, Coulomb {err:.2e} < 1e-3 at n=4000 "
        f"-> {conv[1]:.2e} at n={gi.refined().n}, exponent +-1/4 worse by {sens:.0f}x (>= 100x)"
    )
    assert report(capsys, 6, "resolvent identity", ok, detail, elapsed, 120)


def test_criterion_7_derivative_oracles(capsys):
    rng = np.random.default_rng(707)
    t0 = time.perf_counter()
    worst = 0.0
    # 10 random maps with 100 random points each
    for k in range(10):
        m = random_holonomic_map(rng, [1, 2, 3][k % 3])
        x = rng.uniform(-1.0, 1.0, size=(100, m.arity_in))
        pairs = (
            (m.jacobian(x), finite_diff.jacobian(m.eval, x, batched=True)),
            (m.hessian(x), finite_diff.hessian(m.eval, x, batched=True)),
        )
        for exact, fd in pairs:
            worst = max(worst, float(np.max(np.abs(exact - fd) / np.maximum(1.0, np.abs(fd)))))
    elapsed = time.perf_counter() - t0
    detail = f"max jacobian/hessian discrepancy {worst:.2e} < 1e-8 over 1000 samples"
    assert report(capsys, 7, "derivative oracles", worst < 1e-8, detail, elapsed, 10)


def test_criterion_8_cli_contract(capsys, tmp_path):
    t0 = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    codes = [main(["run", "coulomb_oscillator", "--output-dir", str(d), "--seed", "1"]) for d in (a, b)]
    identical = sorted(p.name for p in a.iterdir()) == sorted(p.name for p in b.iterdir()) and all(
        f.read_bytes() == (b / f.name).read_bytes() for f in a.iterdir()
    )
    doc = json.loads(bundled_scenario_path("coulomb_oscillator").read_text())
    doc["transform"]["time_scale"] = "-Q1"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    out_bad = tmp_path / "bad_out"
    bad_code = main(["run", str(bad), "--output-dir", str(out_bad)])
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    ok = codes == [EXIT_PASS, EXIT_PASS] and identical and bad_code == EXIT_INVALID and not out_bad.exists()
    detail = f"exit codes {codes}, bit-identical {identical}, invalid exit {bad_code} with no output {not out_bad.exists()}"
    assert report(capsys, 8, "CLI contract", ok, detail, elapsed, 120)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
