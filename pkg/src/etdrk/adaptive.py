"""Adaptive step-size control from an ETD1 / third-order exponential pair.

Each attempt advances the same state with ETD1 and with ed-etdrk3a at the
current step, estimates the relative difference e and proposes

    tau_new = clamp(rho * (tol / e)**r * tau, tau_min, tau_max).

The step is rejected and retried while e > tol, except at tau_min, where
it is always accepted. The third-order result is the one kept.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import spectral
from .models import ModelSpec, energy_from_hat
from .spectral import Grid
from .stepper import DivergenceError, RunRecord, make_plan, step_spectral
from .tableau import builtin_scheme

MAX_REJECTIONS = 25


class AdaptiveAbort(RuntimeError):
    """Too many consecutive rejections."""


@dataclass(frozen=True)
class AdaptiveParams:
    rho: float = 0.9
    tol: float = 5e-3
    r: float = 1.0 / 3.0
    tau_min: float = 1e-4
    tau_max: float = 1e-2
    norm: str = "l2"  # or "linf"
    low_scheme: str = "etd1"
    high_scheme: str = "ed-etdrk3a"

    def __post_init__(self):
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not self.r > 0 or not self.tol > 0:
            raise ValueError("r and tol must be positive")
        if self.norm not in ("l2", "linf"):
            raise ValueError("norm must be 'l2' or 'linf'")

    @property
    def tau_init(self) -> float:
        return self.tau_min

    def to_dict(self) -> dict:
        return asdict(self)


def a_dp(e: float, tau: float, params: AdaptiveParams) -> float:
    """Proposed step rho*(tol/e)^r*tau clamped to [tau_min, tau_max]."""
    if not tau > 0 or not e >= 0:
        raise ValueError("need e >= 0 and tau > 0")
    if e == 0:
        return params.tau_max
    proposal = params.rho * (params.tol / e) ** params.r * tau
    return min(params.tau_max, max(params.tau_min, proposal))


def relative_difference(low, high, norm: str = "l2") -> float:
    diff = low - high
    if norm == "linf":
        num, den = np.max(np.abs(diff)), np.max(np.abs(high))
    else:
        num, den = np.linalg.norm(diff), np.linalg.norm(high)
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


@dataclass
class AdaptiveRecord(RunRecord):
    # one row per attempt: (attempt, t_start, dt, e_rel, accepted)
    attempts: list = field(default_factory=list)

    @property
    def rejections(self) -> int:
        return sum(1 for row in self.attempts if not row[4])

    def attempt_rows(self):
        return iter(self.attempts)


def _landing(tau, remaining, params):
    """Shorten the step near T without leaving a remainder below tau_min."""
    if tau >= remaining:
        return remaining
    if remaining - tau < params.tau_min:
        return min(params.tau_max, max(params.tau_min, remaining - params.tau_min))
    return tau


def adaptive_run(model: ModelSpec, grid: Grid, u0, params: AdaptiveParams, T: float,
                 snapshot_times=(), error_hook=None) -> AdaptiveRecord:
    """Integrate to T with the adaptive pair.

    ``error_hook(e, t, tau) -> e`` may replace the estimate; tests use it to
    force rejections.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    low_tab, high_tab = builtin_scheme(params.low_scheme), builtin_scheme(params.high_scheme)
    plans: dict = {}

    def plans_for(tau):
        if tau not in plans:
            if len(plans) > 64:
                plans.clear()
            plans[tau] = (make_plan(model, low_tab, grid, tau), make_plan(model, high_tab, grid, tau))
        return plans[tau]

    u = np.array(u0, dtype=float)
    u_hat = spectral.transform_forward(grid, u)
    rec = AdaptiveRecord()
    rec.append(0.0, 0.0, energy_from_hat(model, grid, u_hat, u), np.max(np.abs(u)))
    pending = sorted(float(t) for t in snapshot_times)
    while pending and pending[0] <= 0.0:
        rec.snapshots[pending.pop(0)] = u.copy()

    t, tau, attempt, streak = 0.0, params.tau_init, 0, 0
    while T - t > 1e-12 * T:
        tau = _landing(tau, T - t, params)
        low, high = plans_for(tau)
        try:
            _, u_low = step_spectral(low, u_hat, u)
            new_hat, new_u = step_spectral(high, u_hat, u)
        except DivergenceError as exc:
            exc.record = rec
            raise
        e = relative_difference(u_low, new_u, params.norm)
        if error_hook is not None:
            e = error_hook(e, t, tau)
        attempt += 1
        accepted = e <= params.tol or tau <= params.tau_min
        rec.attempts.append((attempt, t, tau, e, int(accepted)))
        proposal = a_dp(e, tau, params)
        if not accepted:
            streak += 1
            if streak >= MAX_REJECTIONS:
                raise AdaptiveAbort(f"{streak} consecutive rejections at t={t:.6g}, last e={e:.3e}")
            tau = proposal
            continue
        streak = 0
        t = T if T - (t + tau) <= 1e-12 * T else t + tau
        u_hat, u = new_hat, new_u
        rec.append(t, tau, energy_from_hat(model, grid, u_hat, u), np.max(np.abs(u)))
        while pending and pending[0] <= t + 0.5 * tau:
            rec.snapshots[pending.pop(0)] = u.copy()
        tau = proposal
    rec.final = u
    return rec
