"""Gradient-flow models u_t = G(L u - g(u)) in Fourier form.

The linear part is split as L = beta*I + Lcal and the explicit remainder
is g(u) = beta*u - f(u). Polynomial nonlinearities use a truncated double
well that is quadratic beyond |u| = M, which makes f globally Lipschitz.

    allen-cahn     G = -1,      Lcal = eps^2 |k|^2,   F = (u^2 - 1)^2 / 4
    cahn-hilliard  G = -|k|^2,  Lcal = eps^2 |k|^2,   F = (u^2 - 1)^2 / 4
    pfc            G = -|k|^2,  Lcal = (1 - |k|^2)^2, F = (u^2 - eps)^2 / 4
    mbe            G = -1,      Lcal = eps^2 |k|^4,   F = -log(1 + |grad u|^2) / 2
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import spectral
from .spectral import Grid

MODEL_NAMES = ("allen-cahn", "cahn-hilliard", "mbe", "pfc")
DEFAULT_BETA = {"allen-cahn": 2.0, "cahn-hilliard": 2.0, "pfc": 3.0, "mbe": 1.0}
DEFAULT_M = 2.0


def truncated_potential(u, M=DEFAULT_M, a=1.0):
    """Truncated well F(u) = (u^2 - a)^2/4 and its derivative.

    Beyond |u| = M both are continued by the second-order Taylor expansion
    at +-M, so F is C^2 across the joins and f' <= 3M^2 - a everywhere.
    With a = 1 this is the standard truncated double well.
    """
    u = np.asarray(u, dtype=float)
    inner = np.abs(u) <= M
    sgn = np.sign(u)
    F_in = 0.25 * (u * u - a) ** 2
    f_in = u**3 - a * u
    slope = 3 * M * M - a
    F_out = 0.5 * slope * u * u - 2 * sgn * M**3 * u + 0.75 * M**4 + 0.25 * a * a
    f_out = slope * u - 2 * sgn * M**3
    F = np.where(inner, F_in, F_out)
    f = np.where(inner, f_in, f_out)
    if F.ndim == 0:
        return float(F), float(f)
    return F, f


@dataclass(frozen=True)
class ModelSpec:
    name: str
    epsilon: float
    beta: float
    M: float
    G_hat: Callable[[np.ndarray], np.ndarray]  # of |k|^2
    Lcal_hat: Callable[[np.ndarray], np.ndarray]  # of |k|^2
    well: float = 1.0  # a in (u^2 - a)^2 / 4
    gradient_type: bool = False
    # optional override of f(u); used to build linear test problems
    nonlinearity: Callable | None = None

    def symbols(self, grid: Grid):
        """(G_hat, Lcal_hat, L_hat) on the grid's half spectrum."""
        ksq = grid.ksq
        G = np.broadcast_to(self.G_hat(ksq), grid.spectral_shape).astype(float)
        Lc = np.broadcast_to(self.Lcal_hat(ksq), grid.spectral_shape).astype(float)
        return G, Lc, self.beta + Lc

    @property
    def lipschitz(self) -> float:
        return 1.0 if self.gradient_type else 3 * self.M**2 - self.well

    def f(self, grid: Grid, u):
        if self.nonlinearity is not None:
            return self.nonlinearity(u)
        if self.gradient_type:
            grads = spectral.gradient(grid, u)
            denom = 1.0 + sum(g * g for g in grads)
            return -spectral.divergence(grid, [g / denom for g in grads])
        return truncated_potential(u, self.M, self.well)[1]

    def potential_density(self, grid: Grid, u):
        if self.gradient_type:
            grads = spectral.gradient(grid, u)
            return -0.5 * np.log1p(sum(g * g for g in grads))
        return truncated_potential(u, self.M, self.well)[0]

    def with_nonlinearity(self, fn) -> "ModelSpec":
        return replace(self, nonlinearity=fn)


def make_model(name: str, epsilon: float, beta: float | None = None, M: float = DEFAULT_M) -> ModelSpec:
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    beta = DEFAULT_BETA[name] if beta is None else float(beta)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    eps2 = epsilon * epsilon
    if name == "allen-cahn":
        return ModelSpec(name, epsilon, beta, M, lambda k2: -np.ones_like(k2), lambda k2: eps2 * k2)
    if name == "cahn-hilliard":
        return ModelSpec(name, epsilon, beta, M, lambda k2: -k2, lambda k2: eps2 * k2)
    if name == "pfc":
        return ModelSpec(name, epsilon, beta, M, lambda k2: -k2, lambda k2: (1.0 - k2) ** 2, well=epsilon)
    # positive symbol eps^2 |k|^4 of eps^2 Delta^2
    return ModelSpec(
        name, epsilon, beta, M, lambda k2: -np.ones_like(k2), lambda k2: eps2 * k2 * k2, gradient_type=True
    )


def nonlinear_g(model: ModelSpec, grid: Grid, field) -> np.ndarray:
    field = np.asarray(field)
    if field.shape != grid.n:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.n}")
    return model.beta * field - model.f(grid, field)


def energy(model: ModelSpec, grid: Grid, field) -> float:
    """E(u) = 1/2 (Lcal u, u) + integral of F, spectral quadrature."""
    return energy_from_hat(model, grid, spectral.transform_forward(grid, field), field)


def energy_from_hat(model: ModelSpec, grid: Grid, u_hat, field) -> float:
    _, Lc, _ = model.symbols(grid)
    quad = 0.5 * grid.measure * float(np.sum(grid.mode_weights * Lc * np.abs(u_hat) ** 2))
    return quad + grid.measure * float(np.mean(model.potential_density(grid, field)))
