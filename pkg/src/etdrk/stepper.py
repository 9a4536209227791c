"""Exponential Runge-Kutta time stepping in Fourier space.

With z = tau * G_hat * L_hat per mode every coefficient is a scalar
function evaluated once per plan::

    v_i     = chi_i(z) u_n - tau * sum_{j<i} a_ij(z) G_hat g_hat(v_j)
    u_{n+1} = chi(z)   u_n - tau * sum_j    b_j(z)  G_hat g_hat(v_j)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .models import ModelSpec, energy_from_hat as energy_of, nonlinear_g
from .spectral import Grid
from .tableau import Tableau, evaluate


class DivergenceError(FloatingPointError):
    def __init__(self, message, stage=None, record=None):
        super().__init__(message)
        self.stage = stage
        self.record = record


@dataclass
class StepPlan:
    tableau: Tableau
    model: ModelSpec
    grid: Grid
    tau: float
    z: np.ndarray
    chi: np.ndarray  # (s + 1, ...) stage exponentials, last entry is exp(z)
    stage_weights: list  # stage_weights[i][j] = -tau * a_ij(z) * G_hat
    final_weights: list  # -tau * b_j(z) * G_hat
    divergence_bound: float


def make_plan(model: ModelSpec, tableau: Tableau, grid: Grid, tau: float) -> StepPlan:
    if not tau > 0:
        raise ValueError("time step must be positive")
    G, _, L = model.symbols(grid)
    z = tau * G * L
    if np.any(z > 0):
        raise ValueError("tau*G*L has positive entries; check the model symbols")
    A, b, chi = evaluate(tableau, z)
    s = tableau.stages
    scale = -tau * G
    stage_weights = [[scale * A[i, j] for j in range(i)] for i in range(s)]
    final_weights = [scale * b[j] for j in range(s)]
    chi_all = np.concatenate([chi, np.exp(z)[None]])
    bound = math.inf if model.gradient_type else 10.0 * model.M
    return StepPlan(tableau, model, grid, float(tau), z, chi_all, stage_weights, final_weights, bound)


def _nonlinear_hat(plan: StepPlan, v):
    g_hat = spectral.transform_forward(plan.grid, nonlinear_g(plan.model, plan.grid, v))
    if plan.grid.dealias:
        g_hat = g_hat * plan.grid.dealias_mask
    return g_hat


def _check(plan: StepPlan, v, stage):
    if not np.all(np.isfinite(v)):
        raise DivergenceError(f"non-finite values in stage {stage}", stage)
    peak = float(np.max(np.abs(v)))
    if peak > plan.divergence_bound:
        raise DivergenceError(f"stage {stage}: max |u| = {peak:.3e} exceeds {plan.divergence_bound:g}", stage)


def step_spectral(plan: StepPlan, u_hat, u=None):
    """Advance one step; returns (u_hat_next, u_next)."""
    grid = plan.grid
    if u is None:
        u = spectral.transform_backward(grid, u_hat)
    g_hats = []
    for i in range(plan.tableau.stages):
        if i == 0:
            v = u
        else:
            v_hat = plan.chi[i] * u_hat
            for w, gh in zip(plan.stage_weights[i], g_hats):
                v_hat = v_hat + w * gh
            v = spectral.transform_backward(grid, v_hat)
        _check(plan, v, i + 1)
        g_hats.append(_nonlinear_hat(plan, v))
    out_hat = plan.chi[-1] * u_hat
    for w, gh in zip(plan.final_weights, g_hats):
        out_hat = out_hat + w * gh
    out = spectral.transform_backward(grid, out_hat)
    _check(plan, out, "final")
    return out_hat, out


def step(plan: StepPlan, u_n) -> np.ndarray:
    u_n = np.asarray(u_n, dtype=float)
    if u_n.shape != plan.grid.n:
        raise ValueError("field does not match the plan's grid")
    return step_spectral(plan, spectral.transform_forward(plan.grid, u_n), u_n)[1]


@dataclass
class RunRecord:
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    max_norms: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    final: np.ndarray | None = None

    def append(self, t, dt, energy, max_norm):
        self.times.append(float(t))
        self.step_sizes.append(float(dt))
        self.energies.append(float(energy))
        self.max_norms.append(float(max_norm))

    def energy_rows(self):
        """Rows of (step, t, dt, energy, max_norm); row 0 is the initial state."""
        for n, vals in enumerate(zip(self.times, self.step_sizes, self.energies, self.max_norms)):
            yield (n, *vals)


def run(model: ModelSpec, tableau: Tableau, grid: Grid, u0, tau: float, T: float, snapshot_times=()) -> RunRecord:
    """Integrate to time T with constant step tau; the last step is shortened to land on T."""
    if not (T >= tau > 0):
        raise ValueError("need T >= tau > 0")
    u = np.array(u0, dtype=float)
    u_hat = spectral.transform_forward(grid, u)
    rec = RunRecord()
    rec.append(0.0, 0.0, energy_of(model, grid, u_hat, u), np.max(np.abs(u)))
    pending = sorted(float(t) for t in snapshot_times)
    while pending and pending[0] <= 0.0:
        rec.snapshots[pending.pop(0)] = u.copy()

    n_full = int(math.floor(T / tau * (1 + 1e-12)))
    remainder = T - n_full * tau
    plans = [(make_plan(model, tableau, grid, tau), n_full)]
    if remainder > 1e-12 * T:
        plans.append((make_plan(model, tableau, grid, remainder), 1))

    t, n = 0.0, 0
    for plan, count in plans:
        for _ in range(count):
            try:
                u_hat, u = step_spectral(plan, u_hat, u)
            except DivergenceError as exc:
                exc.record = rec
                raise
            n += 1
            t = n * tau if plan is plans[0][0] else T
            rec.append(t, plan.tau, energy_of(model, grid, u_hat, u), np.max(np.abs(u)))
            while pending and pending[0] <= t + 0.5 * plan.tau:
                rec.snapshots[pending.pop(0)] = u.copy()
    rec.final = u
    return rec
