"""Evaluation of the phi-functions used by exponential integrators.

    phi_0(z) = exp(z),    phi_{k+1}(z) = (phi_k(z) - 1/k!) / z

Near the origin the recursion cancels catastrophically, so a truncated
Taylor series ``phi_k(z) = sum_j z**j / (j + k)!`` is used for
``|z| < series_threshold(k)``. Elsewhere the forward recursion is started
from ``phi_1 = expm1(z) / z``. Each recursion step amplifies rounding by
roughly (j + 1) / |z|, so the switch point moves outward for k > 4.
"""

from math import factorial

import numpy as np

MAX_INDEX = 8
SERIES_THRESHOLD = 0.5
# 8**48 / 48! < 1e-17: enough for the widest switch point below
SERIES_TERMS = 48

_INV_FACTORIAL = np.array([1.0 / factorial(j) for j in range(MAX_INDEX + SERIES_TERMS + 1)])


def _check_index(k):
    if int(k) != k or k < 0:
        raise ValueError(f"phi index must be a non-negative integer, got {k!r}")
    if k > MAX_INDEX:
        raise ValueError(f"phi index {k} exceeds supported maximum {MAX_INDEX}")
    return int(k)


def phi_taylor(k, z, terms=SERIES_TERMS):
    """Truncated Taylor series of phi_k; accurate only for small |z|."""
    z = np.asarray(z)
    acc = np.zeros_like(z, dtype=np.result_type(z, float))
    # Horner from the highest term down
    for j in range(terms - 1, -1, -1):
        acc = acc * z + _INV_FACTORIAL[j + k]
    return acc


def phi_recursion(k, z):
    """Forward recursion from phi_1 = expm1(z)/z; z must be nonzero."""
    z = np.asarray(z)
    if k == 0:
        return np.exp(z)
    with np.errstate(over="ignore"):
        val = np.expm1(z) / z
    for j in range(1, k):
        val = (val - _INV_FACTORIAL[j]) / z
    return val


def series_threshold(k):
    return SERIES_THRESHOLD if k <= 4 else float(k)


def _phi_any(k, z):
    z = np.asarray(z)
    if k == 0:
        return np.exp(z)
    small = np.abs(z) < series_threshold(k)
    if z.ndim == 0:
        return phi_taylor(k, z) if small else phi_recursion(k, z)
    out = np.empty(z.shape, dtype=np.result_type(z, float))
    if small.any():
        out[small] = phi_taylor(k, z[small])
    big = ~small
    if big.any():
        out[big] = phi_recursion(k, z[big])
    return out


def phi(k, z):
    """Return phi_k(z) for a scalar z (real or complex).

    Relative accuracy is better than 1e-12 on the negative real axis for
    k <= 4. Complex arguments go through the same code path; no accuracy
    claim is made for them beyond about 1e-10.
    """
    k = _check_index(k)
    if not np.isfinite(z):
        raise ValueError(f"phi argument must be finite, got {z!r}")
    val = _phi_any(k, np.asarray(z))
    return complex(val) if np.iscomplexobj(val) else float(val)


def phi_array(k, z):
    """Vectorised phi_k over an array of finite arguments of any sign."""
    k = _check_index(k)
    z = np.asarray(z, dtype=np.result_type(z, float))
    if not np.all(np.isfinite(z)):
        raise ValueError("phi arguments must be finite")
    return _phi_any(k, z)


def phi_on_spectrum(k, eigs, slack=1e-12):
    """phi_k applied to the (non-positive) spectrum of tau*G*L.

    Entries are clipped to zero if they sit within ``slack`` above it;
    anything more positive points at a wrongly signed multiplier.
    """
    eigs = np.asarray(eigs, dtype=float)
    if np.any(eigs > slack):
        raise ValueError(
            f"spectrum has positive entries (max {eigs.max():.3e}); "
            "expected tau*G*L <= 0"
        )
    return phi_array(k, np.minimum(eigs, 0.0))
