"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary. The two long experiments carry the
``slow`` marker and can be skipped with ``-m "not slow"``.
"""

import math
import time

import numpy as np
import pytest
from conftest import VERDICTS

from etdrk import spectral
from etdrk.adaptive import AdaptiveParams, adaptive_run
from etdrk.certificate import certify, minor_curves
from etdrk.harness import converge, initial_field, write_snapshots
from etdrk.models import make_model, nonlinear_g
from etdrk.phi import phi_recursion, phi_taylor
from etdrk.spectral import Grid
from etdrk.stepper import make_plan, run, step
from etdrk.tableau import SCHEME_NAMES, builtin_scheme

CERTIFIED = ("etd1", "etdrk2", "ed-etdrk3a", "ed-etdrk3b")
REJECTED = ("cm-etdrk3", "cm-etdrk4", "krogstad-etdrk4")


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    VERDICTS.append(line)
    assert ok, line


def energy_decreasing(energies):
    E = np.asarray(energies)
    return bool(np.all(np.diff(E) <= 1e-9 * (1 + np.abs(E[:-1]))))


def test_criterion_1_certificate_signs():
    start = time.perf_counter()
    reports = {name: certify(builtin_scheme(name)) for name in SCHEME_NAMES}
    elapsed = time.perf_counter() - start
    verdicts = {name: r.verdict for name, r in reports.items()}
    signs_ok = all(verdicts[n] == "pass" for n in CERTIFIED) and all(verdicts[n] == "fail" for n in REJECTED)
    cm3 = reports["cm-etdrk3"]
    near_zero = cm3.eig_worst_z == pytest.approx(-1e-6, rel=1e-9)
    verdict(1, signs_ok and near_zero and elapsed < 10,
            f"verdicts {verdicts}; cm-etdrk3 worst eigenvalue at z={cm3.eig_worst_z:.3g}; {elapsed:.1f}s")


def test_criterion_2_scaled_minor_bounds():
    start = time.perf_counter()
    tab = builtin_scheme("ed-etdrk3a")
    checks = []
    for lo, hi, col, power, bound in [(-3, -1, 2, 4, 0.2), (-1, 0, 2, 0, 0.2), (-6, -1, 3, 6, 0.1), (-1, 0, 3, 0, 0.1)]:
        # 500 points on [lo, hi], or on [lo, hi) when hi = 0
        z = np.linspace(lo, hi, 501)[:-1] if hi == 0 else np.linspace(lo, hi, 500)
        det = minor_curves(tab, z)[:, col]
        value = float(np.min(z**power * det))
        checks.append((f"z^{power}*Det{col} on [{lo},{hi}]", value, value >= bound - 1e-12))
    elapsed = time.perf_counter() - start
    ok = all(c[2] for c in checks) and elapsed < 5
    verdict(2, ok, "; ".join(f"min {name} = {v:.4f}" for name, v, _ in checks) + f"; {elapsed:.2f}s")


def _convergence(name):
    grid = Grid.square(128, 2 * math.pi)
    x, y = grid.coords()
    # the reference uses tau_finest / 4 = 0.01 / 64
    return converge(make_model(name, 0.5, 2.0), builtin_scheme("ed-etdrk3a"), grid, 0.5 * np.sin(x) * np.sin(y),
                    0.32, 0.01, 4, reference_divisor=4)


@pytest.mark.parametrize("name,target", [("allen-cahn", 2.6852e-08), ("cahn-hilliard", 4.2646e-07)])
def test_criterion_3_convergence_rates(name, target):
    start = time.perf_counter()
    table = _convergence(name)
    elapsed = time.perf_counter() - start
    rates = table.linf_rates[1:] + table.l2_rates[1:]
    rates_ok = all(abs(r - 3.0) <= 0.1 for r in rates)
    ratio = table.linf[0] / target
    magnitude_ok = 0.1 <= ratio <= 10
    verdict(3, rates_ok and magnitude_ok and elapsed < 120,
            f"{name}: Linf rates {[round(r, 3) for r in table.linf_rates[1:]]}, "
            f"L2 rates {[round(r, 3) for r in table.l2_rates[1:]]}, "
            f"Linf error at tau=0.01 {table.linf[0]:.3e} ({ratio:.1f}x the target value); {elapsed:.0f}s")


def _decay_setups():
    square = Grid.square(128, 2 * math.pi)
    noise = initial_field({"kind": "random", "seed": 4, "amplitude": 0.9}, square)
    pfc_grid = Grid.square(128, 32.0)
    return [
        ("allen-cahn", make_model("allen-cahn", 0.1, 2.0), square, noise),
        ("cahn-hilliard", make_model("cahn-hilliard", 0.5, 2.0), square, noise),
        ("pfc", make_model("pfc", 0.025, 3.0), pfc_grid, initial_field({"kind": "preset", "name": "pfc-sine"}, pfc_grid)),
    ]


def test_criterion_4_unconditional_energy_decay():
    start = time.perf_counter()
    failures, count = [], 0
    for label, model, grid, u0 in _decay_setups():
        for name in CERTIFIED:
            for tau in (0.01, 0.1, 1.0, 10.0):
                rec = run(model, builtin_scheme(name), grid, u0, tau, 200 * tau)
                count += 1
                if len(rec.energies) != 201 or not energy_decreasing(rec.energies):
                    failures.append(f"{label}/{name}/tau={tau}")
    elapsed = time.perf_counter() - start
    verdict(4, not failures and elapsed < 300,
            f"{count - len(failures)}/{count} runs of 200 steps non-increasing"
            + (f"; failing {failures}" if failures else "") + f"; {elapsed:.0f}s")


def test_criterion_5_conservation_and_equilibria():
    start = time.perf_counter()
    grid = Grid.square(128, 2 * math.pi)
    rng = np.random.default_rng(12)
    u0 = 0.2 + 0.3 * (2 * rng.random(grid.n) - 1)
    drift = {}
    for label, model in [("cahn-hilliard", make_model("cahn-hilliard", 0.1)), ("pfc", make_model("pfc", 0.025))]:
        rec = run(model, builtin_scheme("ed-etdrk3a"), grid, u0, 0.01, 10.0)
        drift[label] = abs(float(np.mean(rec.final) - np.mean(u0)))
    ac = make_model("allen-cahn", 0.1, 2.0)
    ch = make_model("cahn-hilliard", 0.1, 2.0)
    linear = ch.with_nonlinearity(lambda u: ch.beta * u)
    G, _, L = ch.symbols(grid)
    smooth = spectral.transform_backward(grid, np.exp(-0.1 * grid.ksq) * spectral.transform_forward(grid, u0))
    exact = spectral.transform_backward(grid, np.exp(0.1 * G * L) * spectral.transform_forward(grid, smooth))
    steady, lin = 0.0, 0.0
    for name in SCHEME_NAMES:
        steady = max(steady, float(np.max(np.abs(step(make_plan(ac, builtin_scheme(name), grid, 1.0), np.ones(grid.n)) - 1))))
        lin = max(lin, float(np.max(np.abs(step(make_plan(linear, builtin_scheme(name), grid, 0.1), smooth) - exact))))
    elapsed = time.perf_counter() - start
    ok = max(drift.values()) <= 1e-12 and steady <= 1e-12 and lin <= 1e-12 and elapsed < 60
    verdict(5, ok, f"mass drift over 1000 steps {', '.join(f'{k} {v:.1e}' for k, v in drift.items())}; "
                   f"u=1 deviation {steady:.1e}; linear one-step error {lin:.1e}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_6_adaptive_controller():
    start = time.perf_counter()
    grid = Grid.square(128, 2 * math.pi)
    model = make_model("cahn-hilliard", 0.1, 2.0)
    u0 = initial_field({"kind": "random", "seed": 20240601, "amplitude": 0.1}, grid)
    params = AdaptiveParams(rho=0.9, tol=5e-3, r=1 / 3, tau_min=1e-4, tau_max=1e-2)
    T = 2.0
    rec = adaptive_run(model, grid, u0, params, T)
    reference = run(model, builtin_scheme("ed-etdrk3a"), grid, u0, params.tau_min, T).final
    elapsed = time.perf_counter() - start
    times, dts = np.array(rec.times[1:]), np.array(rec.step_sizes[1:])
    # the transient is the first tenth of the horizon; the landing step is excluded
    late = dts[(times > 0.1 * T) & (times < T)]
    share = float(np.mean(late >= params.tau_max / 2))
    bounded = bool(np.all(dts >= params.tau_min * (1 - 1e-12)) and np.all(dts <= params.tau_max * (1 + 1e-12)))
    rel = float(np.linalg.norm(rec.final - reference) / np.linalg.norm(reference))
    ok = share >= 0.6 and rel <= 2.5e-2 and bounded and elapsed < 300
    verdict(6, ok, f"{share:.0%} of late accepted steps within 2x of tau_max, {rec.rejections} rejections, "
                   f"relative L2 vs uniform tau_min {rel:.2e}, steps bounded {bounded}; {elapsed:.0f}s")


def test_criterion_7_oracle_equivalence():
    start = time.perf_counter()
    grid = Grid.square(64, 2 * math.pi)
    model = make_model("allen-cahn", 0.1, 2.0)
    tau = 0.1
    G, _, L = model.symbols(grid)
    z = tau * G * L
    ez = np.exp(z)
    rng = np.random.default_rng(13)
    worst = 0.0
    etd1, etdrk2 = (make_plan(model, builtin_scheme(n), grid, tau) for n in ("etd1", "etdrk2"))
    for _ in range(50):
        u = 0.9 * (2 * rng.random(grid.n) - 1)
        u_hat = spectral.transform_forward(grid, u)
        # ETD1: e^z u + (1 - e^z) L^-1 g(u)
        a_hat = ez * u_hat + (1 - ez) / L * spectral.transform_forward(grid, nonlinear_g(model, grid, u))
        a = spectral.transform_backward(grid, a_hat)
        # ETDRK2: a + (e^z - 1 - z) / (tau L^2) (g(a) - g(u)), here G = -1
        corr = (np.expm1(z) - z) / (tau * L * L)
        diff = spectral.transform_forward(grid, nonlinear_g(model, grid, a) - nonlinear_g(model, grid, u))
        second = spectral.transform_backward(grid, a_hat + corr * diff)
        worst = max(worst, float(np.max(np.abs(step(etd1, u) - a))), float(np.max(np.abs(step(etdrk2, u) - second))))
    zs = -np.linspace(0.5, 4.0, 1000)
    cross = max(float(np.max(np.abs(phi_taylor(k, zs) - phi_recursion(k, zs)) / np.abs(phi_recursion(k, zs))))
                for k in range(1, 5))
    elapsed = time.perf_counter() - start
    verdict(7, worst <= 1e-12 and cross <= 1e-10 and elapsed < 10,
            f"engine vs closed forms {worst:.1e} over 50 states; phi series vs recursion {cross:.1e}; {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_8_pfc_pattern_formation(tmp_path):
    start = time.perf_counter()
    grid = Grid.square(256, 128.0)
    model = make_model("pfc", 0.025, 3.0)
    u0 = initial_field({"kind": "random", "seed": 1, "mean": 0.05, "amplitude": 0.01}, grid)
    shots = (50, 100, 200, 500, 1000, 2000)
    rec = run(model, builtin_scheme("ed-etdrk3a"), grid, u0, 0.1, 2000.0, snapshot_times=shots)
    files = write_snapshots(tmp_path, rec.snapshots)
    elapsed = time.perf_counter() - start
    E = np.array(rec.energies)
    drop = E[0] - E[-1]
    by_time = {t: (E[0] - E[np.searchsorted(rec.times, t - 1e-9)]) / drop for t in (10, 50, 200, 2000)}
    ok = drop > 0 and by_time[2000] >= 0.9 and len(files) == len(shots) and energy_decreasing(E)
    verdict(8, ok, f"energy {E[0]:.4f} -> {E[-1]:.4f}; share of the drop reached by t=10/50/200/2000: "
                   + "/".join(f"{v:.3f}" for v in by_time.values()) + f"; {len(files)} snapshots; {elapsed:.0f}s")
