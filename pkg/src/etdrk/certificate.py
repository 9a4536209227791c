"""Energy-stability certificate for exponential Runge-Kutta tableaux.

For a scalar z = tau*G*L < 0 the tableau is stacked into the lower
triangular matrix P (rows a_{i+1,1..i} for i < s, last row b) and

    Delta(z)  = z E_L + P^{-1} E_L - (z/2) I
    Delta'(z) = z P E P^T + E_L P^T + P E_L^T = P (Delta + Delta^T) P^T

with E_L the lower triangular ones matrix and E the all-ones matrix. The
scheme decreases the energy for every step size when Delta(z) has a
positive definite symmetric part for all z < 0. G and L are diagonal in the
periodic Fourier basis, so the operator statement reduces to this scalar
family, which is scanned on a log-spaced grid of |z|.

Beyond the grid the exponentials are negligible and every leading minor of
Delta' is a Laurent polynomial in z plus terms carrying exp(r z), r > 0.
:func:`tail_check` builds those minors in exact rational arithmetic and
bounds the polynomial part from below and the exponential part from above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations

import numpy as np

from .tableau import Tableau, evaluate

DEFAULT_ZMIN = -1e6
DEFAULT_ZMAX = -1e-6
DEFAULT_POINTS = 2000


class SingularTableauError(ArithmeticError):
    pass


@dataclass
class StabilityMatrices:
    z: float
    P: np.ndarray
    Delta: np.ndarray
    DeltaPrime: np.ndarray
    E_L: np.ndarray
    E: np.ndarray


def stacked_coefficients(tableau: Tableau, z):
    """P(z) for scalar z, or a batch of shape (len(z), s, s)."""
    z_arr = np.asarray(z, dtype=float)
    A, b, _ = evaluate(tableau, z_arr)
    s = tableau.stages
    P = np.zeros((s, s) + z_arr.shape)
    P[: s - 1] = A[1:]
    P[s - 1] = b
    return np.moveaxis(P, (0, 1), (-2, -1)) if z_arr.ndim else P


def _lower_inverse(P):
    """Inverse of a batch of lower triangular matrices by forward substitution."""
    s = P.shape[-1]
    diag = np.diagonal(P, axis1=-2, axis2=-1)
    if np.any(np.abs(diag) < 1e-300):
        raise SingularTableauError("P(z) has a vanishing diagonal entry")
    inv = np.zeros_like(P)
    for col in range(s):
        for row in range(col, s):
            acc = (1.0 if row == col else 0.0) - np.einsum(
                "...k,...k->...", P[..., row, col:row], inv[..., col:row, col]
            )
            inv[..., row, col] = acc / P[..., row, row]
    return inv


def _delta_batch(P, z):
    s = P.shape[-1]
    E_L = np.tril(np.ones((s, s)))
    E = np.ones((s, s))
    I = np.eye(s)
    zz = z[:, None, None]
    Delta = zz * E_L + _lower_inverse(P) @ E_L - 0.5 * zz * I
    Pt = np.swapaxes(P, -1, -2)
    DeltaPrime = zz * (P @ E @ Pt) + E_L @ Pt + P @ E_L.T
    return Delta, DeltaPrime


def build_matrices(tableau: Tableau, z: float) -> StabilityMatrices:
    if not z < 0:
        raise ValueError("z must be negative")
    P = stacked_coefficients(tableau, np.array([z]))
    Delta, DeltaPrime = _delta_batch(P, np.array([z], dtype=float))
    s = tableau.stages
    return StabilityMatrices(
        z=float(z),
        P=P[0],
        Delta=Delta[0],
        DeltaPrime=0.5 * (DeltaPrime[0] + DeltaPrime[0].T),
        E_L=np.tril(np.ones((s, s))),
        E=np.ones((s, s)),
    )


def min_sym_eig(M) -> float:
    """Smallest eigenvalue of the symmetric part (M + M^T)/2."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.ndim == 2:
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))[..., 0]


def leading_minors(M):
    """Determinants of the k x k top-left blocks, k = 1..s (LU with pivoting)."""
    M = np.asarray(M, dtype=float)
    s = M.shape[-1]
    return np.stack([np.linalg.det(M[..., :k, :k]) for k in range(1, s + 1)], axis=-1)


# exact exponential polynomials for the tail --------------------------------
class ExpPoly:
    """Finite sum of q * z**p * exp(r z) with rational q, r and integer p."""

    def __init__(self, terms=None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    def __add__(self, o):
        out = dict(self.terms)
        for k, v in o.terms.items():
            out[k] = out.get(k, Fraction(0)) + v
        return ExpPoly(out)

    def __sub__(self, o):
        return self + o.scale(-1)

    def __mul__(self, o):
        out: dict = {}
        for (r1, p1), v1 in self.terms.items():
            for (r2, p2), v2 in o.terms.items():
                key = (r1 + r2, p1 + p2)
                out[key] = out.get(key, Fraction(0)) + v1 * v2
        return ExpPoly(out)

    def scale(self, q):
        return ExpPoly({k: v * q for k, v in self.terms.items()})

    def shift_power(self, n):
        return ExpPoly({(r, p + n): v for (r, p), v in self.terms.items()})

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return sum(float(v) * z**p * np.exp(float(r) * z) for (r, p), v in self.terms.items())

    def split(self):
        """(non-exponential part, exponential remainder)."""
        poly = ExpPoly({k: v for k, v in self.terms.items() if k[0] == 0})
        rest = ExpPoly({k: v for k, v in self.terms.items() if k[0] != 0})
        return poly, rest


def _phi_exppoly(k: int, s: Fraction) -> ExpPoly:
    if s == 0:
        return ExpPoly({(Fraction(0), 0): Fraction(1, math.factorial(k))})
    # phi_k(w) = (e^w - sum_{j<k} w^j / j!) / w^k with w = s z
    out = {(s, -k): s ** (-k)}
    for j in range(k):
        out[(Fraction(0), j - k)] = -(s ** (j - k)) / math.factorial(j)
    return ExpPoly(out)


def _expr_exppoly(expr) -> ExpPoly:
    total = ExpPoly()
    for mono, w in expr.terms.items():
        term = ExpPoly({(Fraction(0), 0): w})
        for k, s in mono:
            term = term * _phi_exppoly(k, s)
        total = total + term
    return total


def _det(M):
    n = len(M)
    total = ExpPoly()
    for perm in permutations(range(n)):
        inversions = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        term = ExpPoly({(Fraction(0), 0): Fraction(1)})
        for i in range(n):
            term = term * M[i][perm[i]]
        total = total + (term.scale(-1) if inversions % 2 else term)
    return total


def symbolic_delta_prime(tableau: Tableau):
    """Delta'(z) as a matrix of exact exponential polynomials."""
    s = tableau.stages
    zero = ExpPoly()
    rows = [list(tableau.a[i + 1]) for i in range(s - 1)] + [list(tableau.b)]
    P = [[_expr_exppoly(rows[i][j]) if j <= i and j < len(rows[i]) else zero for j in range(s)] for i in range(s)]
    rowsum = [sum((P[i][j] for j in range(s)), ExpPoly()) for i in range(s)]
    # (E_L P^T)_{ij} = sum_{k<=i} P_jk
    partial = [[sum((P[j][k] for k in range(i + 1)), ExpPoly()) for j in range(s)] for i in range(s)]
    D = [[None] * s for _ in range(s)]
    for i in range(s):
        for j in range(s):
            D[i][j] = (rowsum[i] * rowsum[j]).shift_power(1) + partial[i][j] + partial[j][i]
    return D


def symbolic_minors(tableau: Tableau):
    D = symbolic_delta_prime(tableau)
    return [_det([row[:k] for row in D[:k]]) for k in range(1, tableau.stages + 1)]


@dataclass
class TailResult:
    z_tail: float
    verified: bool
    margins: list  # per minor: lower bound of |z|^-p_max * sign * minor on z <= z_tail
    leading: list  # per minor: (power, coefficient) of the dominant polynomial term


def tail_check(tableau: Tableau, z_tail: float) -> TailResult:
    """Certify positivity of all leading minors of Delta' on z <= z_tail < 0.

    For each minor m(z) = poly(z) + rest(z) with poly the non-exponential
    part, let a*z**p be the highest-power term of poly. For |z| >= Z = |z_tail|,

        sign(a (-1)^p) m(z) / |z|**p >= |a| - sum |c_q| Z**(q-p) - sum |c| e^{-rZ} Z**(q-p)

    where the exponential bound needs every e^{-r|z|}|z|^(q-p) to be
    decreasing on [Z, inf), i.e. Z >= (q-p)/r. A positive right-hand side
    with a (-1)^p > 0 proves positivity on the tail.
    """
    Z = abs(float(z_tail))
    margins, leading, ok = [], [], True
    for minor in symbolic_minors(tableau):
        poly, rest = minor.split()
        if not poly.terms:
            margins.append(-math.inf)
            leading.append(None)
            ok = False
            continue
        p_max = max(p for (_, p) in poly.terms)
        a = poly.terms[(Fraction(0), p_max)]
        leading.append((p_max, float(a)))
        positive = (a > 0) == (p_max % 2 == 0)
        bound = abs(float(a))
        for (_, q), c in poly.terms.items():
            if q != p_max:
                bound -= abs(float(c)) * Z ** (q - p_max)
        for (r, q), c in rest.terms.items():
            r = float(r)
            if r <= 0 or Z < (q - p_max) / r:
                bound = -math.inf
                break
            bound -= abs(float(c)) * math.exp(-r * Z + (q - p_max) * math.log(Z))
        margins.append(bound if positive else -bound)
        ok = ok and positive and bound > 0
    return TailResult(-Z, ok, margins, leading)


# scan ------------------------------------------------------------------------
def log_grid(z_min=DEFAULT_ZMIN, z_max=DEFAULT_ZMAX, points=DEFAULT_POINTS):
    """Negative z with |z| log-spaced over [|z_max|, |z_min|], ordered by increasing |z|."""
    if not (z_min < z_max < 0):
        raise ValueError("need z_min < z_max < 0")
    if points < 2:
        raise ValueError("need at least two grid points")
    return -np.logspace(math.log10(-z_max), math.log10(-z_min), points)


@dataclass
class CertificateReport:
    scheme: str
    z_grid: np.ndarray
    min_eig_sym_delta: np.ndarray
    minors_delta_prime: np.ndarray  # (points, s)
    scaled_minors: np.ndarray  # (points, 2): z^4 Det_2, z^(2s) Det_s
    tail: TailResult | None = None
    worst_z: float = field(init=False)
    worst_value: float = field(init=False)

    def __post_init__(self):
        # worst point: the smallest of the eigenvalue and the minors
        cand = np.minimum(self.min_eig_sym_delta, self.minors_delta_prime.min(axis=1))
        idx = int(np.argmin(cand))
        self.worst_z = float(self.z_grid[idx])
        self.worst_value = float(cand[idx])

    @property
    def grid_pass(self) -> bool:
        return bool(np.all(self.min_eig_sym_delta > 0) and np.all(self.minors_delta_prime > 0))

    @property
    def verdict(self) -> str:
        if not self.grid_pass:
            return "fail"
        if self.tail is None or not self.tail.verified:
            return "tail-unverified"
        return "pass"

    @property
    def eig_worst_z(self) -> float:
        return float(self.z_grid[int(np.argmin(self.min_eig_sym_delta))])

    def verdict_line(self) -> str:
        return f"# verdict={self.verdict} worst_z={self.worst_z:.17g} worst_value={self.worst_value:.17g}"

    def csv_lines(self):
        s = self.minors_delta_prime.shape[1]
        cols = ["z", "min_eig"] + [f"minor{k}" for k in range(1, s + 1)] + ["scaled_minor2", f"scaled_minor{s}"]
        yield ",".join(cols)
        for n, z in enumerate(self.z_grid):
            vals = [z, self.min_eig_sym_delta[n], *self.minors_delta_prime[n], *self.scaled_minors[n]]
            yield ",".join(f"{v:.17g}" for v in vals)
        yield self.verdict_line()


def _scaled(z, minors):
    s = minors.shape[1]
    second = z**4 * minors[:, 1] if s >= 2 else np.full(z.shape, np.nan)
    last = z ** (2 * s) * minors[:, -1]
    return np.column_stack([second, last])


def scan(tableau: Tableau, z_grid):
    z = np.asarray(z_grid, dtype=float)
    if np.any(z >= 0):
        raise ValueError("certificate grid must be strictly negative")
    P = stacked_coefficients(tableau, z)
    Delta, DeltaPrime = _delta_batch(P, z)
    DeltaPrime = 0.5 * (DeltaPrime + np.swapaxes(DeltaPrime, -1, -2))
    return min_sym_eig(Delta), leading_minors(DeltaPrime)


def certify(tableau: Tableau, z_min=DEFAULT_ZMIN, z_max=DEFAULT_ZMAX, points=DEFAULT_POINTS) -> CertificateReport:
    z = log_grid(z_min, z_max, points)
    eig, minors = scan(tableau, z)
    tail = tail_check(tableau, z_min)
    return CertificateReport(tableau.name, z, eig, minors, _scaled(z, minors), tail)


def minor_curves(tableau: Tableau, z_grid):
    """Rows of (z, Det_1, ..., Det_s, z^4 Det_2, z^(2s) Det_s)."""
    z = np.asarray(z_grid, dtype=float)
    _, minors = scan(tableau, z)
    return np.column_stack([z, minors, _scaled(z, minors)])
