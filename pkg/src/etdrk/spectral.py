"""Periodic Fourier grids, transforms and multiplier operators.

Fields are real arrays of shape ``grid.n``. Spectral fields use the
real-to-complex (half spectrum) layout along the last axis. The forward
transform is normalised by 1/N so the zero mode equals the spatial mean,
and a pure mode sin(x) has coefficients of magnitude 1/2 at m = +-1.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

SNAPSHOT_MAGIC = b"ETDF"
SNAPSHOT_VERSION = 1


def fft_workers() -> int:
    env = os.environ.get("ETDRK_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass(frozen=True, eq=False)
class Grid:
    n: tuple[int, ...]
    lengths: tuple[float, ...]
    dealias: bool = False

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if len(lengths) == 1 and len(n) > 1:
            lengths = lengths * len(n)
        if len(n) not in (1, 2) or len(lengths) != len(n):
            raise ValueError("grid must be 1D or 2D with one length per dimension")
        for v in n:
            if v < 2 or v & (v - 1):
                raise ValueError(f"point counts must be powers of two, got {v}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def square(cls, n: int, length: float, dims: int = 2, dealias: bool = False) -> "Grid":
        return cls((n,) * dims, (length,) * dims, dealias)

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.n, self.lengths, self.dealias) == (
            other.n,
            other.lengths,
            other.dealias,
        )

    def __hash__(self):
        return hash((self.n, self.lengths, self.dealias))

    @property
    def dims(self) -> int:
        return len(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.n[:-1] + (self.n[-1] // 2 + 1,)

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.n))

    def coords(self):
        """Meshgrid of point coordinates x_j = j * L / n, 'ij' indexing."""
        axes = [np.arange(n) * (L / n) for n, L in zip(self.n, self.lengths)]
        return np.meshgrid(*axes, indexing="ij") if self.dims > 1 else axes

    @cached_property
    def mode_indices(self):
        """Integer mode numbers m per axis, broadcastable to the spectral shape."""
        out = []
        for d, n in enumerate(self.n):
            m = np.fft.rfftfreq(n, 1.0 / n) if d == self.dims - 1 else np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * self.dims
            shape[d] = m.size
            out.append(m.reshape(shape))
        return out

    @cached_property
    def wavevector(self):
        """k_d = 2 pi m_d / L_d per axis."""
        return [2 * np.pi * m / L for m, L in zip(self.mode_indices, self.lengths)]

    @cached_property
    def ksq(self) -> np.ndarray:
        total = np.zeros(self.spectral_shape)
        for k in self.wavevector:
            total = total + k**2
        return total

    @cached_property
    def derivative_wavevector(self):
        """Wavevector with the Nyquist mode zeroed, for odd derivatives."""
        out = []
        for k, m, n in zip(self.wavevector, self.mode_indices, self.n):
            out.append(np.where(np.abs(m) == n // 2, 0.0, k))
        return out

    @cached_property
    def mode_weights(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum mode in the full spectrum."""
        n_last = self.n[-1]
        w = np.full(self.spectral_shape[-1], 2.0)
        w[0] = 1.0
        if n_last % 2 == 0:
            w[-1] = 1.0
        return np.broadcast_to(w, self.spectral_shape)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep = np.ones(self.spectral_shape, dtype=bool)
        for m, n in zip(self.mode_indices, self.n):
            keep &= np.abs(m) < n / 3.0
        return keep


def _check_field(grid: Grid, field):
    field = np.asarray(field)
    if field.shape != grid.n:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.n}")
    return field


def transform_forward(grid: Grid, field) -> np.ndarray:
    field = _check_field(grid, field)
    return sfft.rfftn(field, norm="forward", workers=fft_workers())


def transform_backward(grid: Grid, spectral) -> np.ndarray:
    spectral = np.asarray(spectral)
    if spectral.shape != grid.spectral_shape:
        raise ValueError(f"spectral shape {spectral.shape} does not match grid {grid.spectral_shape}")
    return sfft.irfftn(spectral, s=grid.n, norm="forward", workers=fft_workers())


def full_spectrum(grid: Grid, spectral) -> np.ndarray:
    """Expand half-spectrum coefficients to the full complex array (numpy fft ordering)."""
    return sfft.fftn(transform_backward(grid, spectral), norm="forward")


def apply_multiplier(grid: Grid, multiplier, spectral) -> np.ndarray:
    """Pointwise product with a multiplier given as array or as callable of the wavevector."""
    values = multiplier(grid.wavevector) if callable(multiplier) else multiplier
    values = np.broadcast_to(np.asarray(values), grid.spectral_shape)
    if not np.all(np.isfinite(values)):
        raise ValueError("multiplier is not finite at every grid wavevector")
    return values * spectral


def gradient(grid: Grid, field):
    u_hat = transform_forward(grid, field)
    return [transform_backward(grid, 1j * k * u_hat) for k in grid.derivative_wavevector]


def divergence(grid: Grid, components) -> np.ndarray:
    if len(components) != grid.dims:
        raise ValueError("need one component per dimension")
    total = np.zeros(grid.spectral_shape, dtype=complex)
    for k, comp in zip(grid.derivative_wavevector, components):
        total += 1j * k * transform_forward(grid, comp)
    return transform_backward(grid, total)


def l2_inner(grid: Grid, u_hat, v_hat) -> float:
    """Integral of u*v over the domain from half-spectrum coefficients."""
    return grid.measure * float(np.sum(grid.mode_weights * (u_hat * np.conj(v_hat)).real))


# snapshot files ------------------------------------------------------------
def write_snapshot(path, field) -> None:
    field = np.ascontiguousarray(field, dtype="<f8")
    header = SNAPSHOT_MAGIC + struct.pack("<HH", SNAPSHOT_VERSION, field.ndim)
    header += struct.pack(f"<{field.ndim}Q", *field.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(field.tobytes(order="C"))


def read_snapshot(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an ETDF snapshot")
    version, ndim = struct.unpack_from("<HH", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    dims = struct.unpack_from(f"<{ndim}Q", data, 8)
    offset = 8 + 8 * ndim
    count = int(np.prod(dims))
    if len(data) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims).astype(float)
