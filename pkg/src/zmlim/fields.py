"""
Periodic grid fields and Fourier calculus on the torus [0, 2*pi)^d.

Fields carry their real nodal values; the Fourier spectrum is computed on
first access and cached.  Spectra use the normalisation

    f(x) = sum_k fhat(k) exp(i k.x),

so ``fhat(0)`` is the mean and Parseval reads
``int |f|^2 dx = (2*pi)^d * sum_k |fhat(k)|^2``.

Differential operators act on spectra.  First-derivative wavenumbers have the
Nyquist entry zeroed and the Laplacian symbol is built from those same
wavenumbers, so ``div(grad f) == laplacian(f)`` holds identically.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Union

import numpy as np
import scipy.fft as sfft

from zmlim.errors import NonZeroMean

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "TensorField",
    "grad",
    "div",
    "laplacian",
    "poisson_solve",
    "leray_decompose",
    "strain",
    "sobolev_norm",
    "dealias",
    "l2_inner",
    "l2_norm",
    "write_snapshot",
    "read_snapshot",
]

MEAN_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with N points per dimension and period 2*pi."""

    d: int = 2
    N: int = 64

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.d}")
        if self.N < 8 or self.N % 2 or (self.N & (self.N - 1)):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def length(self) -> float:
        return 2 * np.pi

    @property
    def dx(self) -> float:
        return 2 * np.pi / self.N

    @property
    def volume(self) -> float:
        return (2 * np.pi) ** self.d

    @cached_property
    def x(self) -> np.ndarray:
        """Node coordinates, shape (d, N, ..., N)."""
        x1 = np.arange(self.N) * self.dx
        return np.array(np.meshgrid(*([x1] * self.d), indexing="ij"))

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavevectors (Nyquist kept as -N/2), shape (d, N, ..., N)."""
        k1 = np.fft.fftfreq(self.N, 1.0 / self.N)
        return np.array(np.meshgrid(*([k1] * self.d), indexing="ij"))

    @cached_property
    def kd(self) -> np.ndarray:
        """Wavevectors used for derivatives (Nyquist zeroed)."""
        kd = self.k.copy()
        kd[np.abs(kd) == self.N // 2] = 0.0
        return kd

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.kd**2, axis=0)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        """1/|k|^2 with zero wherever the symbol vanishes."""
        out = np.zeros_like(self.k2)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def khat(self) -> np.ndarray:
        """Unit wavevectors k/|k| (zero where |k| = 0)."""
        return self.kd * np.sqrt(self.inv_k2)

    @cached_property
    def sobolev_k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def mask(self) -> np.ndarray:
        """Two-thirds rule: keep modes with every |k_j| <= N/3."""
        return np.all(np.abs(self.k) <= self.N / 3.0, axis=0)

    # -- transforms on raw arrays -------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return sfft.fftn(values, axes=axes, norm="forward")

    def ifft(self, spec: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return sfft.ifftn(spec, axes=axes, norm="forward").real

    def fft_dealiased(self, values: np.ndarray) -> np.ndarray:
        return self.fft(values) * self.mask

    # -- spectral calculus on raw spectra -----------------------------------

    def grad_hat(self, fhat: np.ndarray) -> np.ndarray:
        return 1j * self.kd * fhat

    def div_hat(self, Fhat: np.ndarray) -> np.ndarray:
        return np.sum(1j * self.kd * Fhat, axis=0)

    def lap_hat(self, fhat: np.ndarray) -> np.ndarray:
        return -self.k2 * fhat

    def inv_lap_hat(self, fhat: np.ndarray) -> np.ndarray:
        return -self.inv_k2 * fhat

    def leray_hat(self, Fhat: np.ndarray) -> np.ndarray:
        """Divergence-free part of a vector spectrum (zero mode retained)."""
        return Fhat - self.gradient_part_hat(Fhat)

    def gradient_part_hat(self, Fhat: np.ndarray) -> np.ndarray:
        return self.kd * (np.sum(self.kd * Fhat, axis=0) * self.inv_k2)

    def jacobian(self, uhat: np.ndarray) -> np.ndarray:
        """Physical-space velocity gradient G[i, j] = d_j u_i."""
        return self.ifft(1j * self.kd[None, :] * uhat[:, None])


def _check_grid(a, b):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


class _FieldBase:
    _rank = 0
    # make numpy scalars defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, grid: Grid, values, name: str = ""):
        values = np.asarray(values, dtype=float)
        expected = (grid.d,) * self._rank + grid.shape
        if values.shape != expected:
            raise ValueError(f"expected values of shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"field {name!r} has non-finite values")
        self.grid = grid
        self.values = values
        self.name = name

    @classmethod
    def from_spectrum(cls, grid: Grid, spec: np.ndarray, name: str = ""):
        return cls(grid, grid.ifft(spec), name)

    @classmethod
    def zeros(cls, grid: Grid, name: str = ""):
        return cls(grid, np.zeros((grid.d,) * cls._rank + grid.shape), name)

    @cached_property
    def spectrum(self) -> np.ndarray:
        return self.grid.fft(self.values)

    def renamed(self, name: str):
        return type(self)(self.grid, self.values, name)

    def _coerce(self, other):
        if isinstance(other, _FieldBase):
            _check_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return type(self)(self.grid, self.values + self._coerce(other), self.name)

    __radd__ = __add__

    def __sub__(self, other):
        return type(self)(self.grid, self.values - self._coerce(other), self.name)

    def __rsub__(self, other):
        return type(self)(self.grid, self._coerce(other) - self.values, self.name)

    def __neg__(self):
        return type(self)(self.grid, -self.values, self.name)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            _check_grid(self, other)
            return type(self)(self.grid, self.values * other.values, self.name)
        if isinstance(other, _FieldBase):
            return NotImplemented
        return type(self)(self.grid, self.values * other, self.name)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / other)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, grid={self.grid})"


class ScalarField(_FieldBase):
    """Real scalar grid function."""

    _rank = 0

    def mean(self) -> float:
        return float(np.mean(self.values))

    def min(self) -> float:
        return float(np.min(self.values))


class VectorField(_FieldBase):
    """Real vector grid function with d components, values shape (d, N, ...)."""

    _rank = 1

    @classmethod
    def from_components(cls, components, name: str = ""):
        components = list(components)
        grid = components[0].grid
        for c in components:
            _check_grid(components[0], c)
        return cls(grid, np.array([c.values for c in components]), name)

    @property
    def components(self) -> tuple:
        return tuple(
            ScalarField(self.grid, self.values[j], f"{self.name}_{j + 1}")
            for j in range(self.grid.d)
        )

    def __getitem__(self, j) -> ScalarField:
        return self.components[j]

    def dot(self, other: "VectorField") -> ScalarField:
        _check_grid(self, other)
        return ScalarField(self.grid, np.sum(self.values * other.values, axis=0))

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=0)))

    def max_abs(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))


class TensorField(_FieldBase):
    """Symmetric rank-2 tensor field, values shape (d, d, N, ...)."""

    _rank = 2

    def __init__(self, grid: Grid, values, name: str = ""):
        super().__init__(grid, values, name)
        if not np.array_equal(self.values, np.swapaxes(self.values, 0, 1)):
            raise ValueError("tensor field must be symmetric")

    def entry(self, i: int, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i, j])

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=0, axis2=1))


Field = Union[ScalarField, VectorField]


# -- operations ---------------------------------------------------------------


def grad(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField.from_spectrum(g, g.grad_hat(f.spectrum), f"grad_{f.name}")


def div(F: VectorField) -> ScalarField:
    g = F.grid
    return ScalarField.from_spectrum(g, g.div_hat(F.spectrum), f"div_{F.name}")


def laplacian(f: Field) -> Field:
    g = f.grid
    return type(f).from_spectrum(g, g.lap_hat(f.spectrum), f"lap_{f.name}")


def poisson_solve(sigma: ScalarField, mean_tol: float = MEAN_TOL) -> ScalarField:
    """Mean-zero solution psi of Laplacian(psi) = sigma.

    Raises
    ------
    NonZeroMean
        If ``|mean(sigma)| > mean_tol``; the periodic problem is then unsolvable.
    """
    m = sigma.mean()
    if abs(m) > mean_tol:
        raise NonZeroMean(f"poisson source has mean {m:.3e} > {mean_tol:.1e}")
    g = sigma.grid
    return ScalarField.from_spectrum(g, g.inv_lap_hat(sigma.spectrum), "psi")


def leray_decompose(u: VectorField):
    """Split ``u`` into divergence-free and gradient parts.

    Returns ``(P_part, Q_part, q_potential)`` with ``u = P_part + Q_part``,
    ``Q_part = grad(q_potential)`` and ``q_potential`` mean-zero.  The constant
    mode of ``u`` goes to ``P_part``.
    """
    g = u.grid
    uhat = u.spectrum
    qhat = -1j * np.sum(g.kd * uhat, axis=0) * g.inv_k2
    Qhat = g.grad_hat(qhat)
    q = ScalarField.from_spectrum(g, qhat, "q")
    Q_part = VectorField.from_spectrum(g, Qhat, f"Q{u.name}")
    P_part = VectorField(g, u.values - Q_part.values, f"P{u.name}")
    return P_part, Q_part, q


def strain_values(grid: Grid, G: np.ndarray) -> np.ndarray:
    """S = G + G^T - (2/3) tr(G) I from a velocity-gradient array."""
    S = G + np.swapaxes(G, 0, 1)
    divu = np.trace(G, axis1=0, axis2=1)
    for i in range(grid.d):
        S[i, i] -= (2.0 / 3.0) * divu
    return S


def strain(u: VectorField) -> TensorField:
    """Deviatoric-type strain grad u + (grad u)^T - (2/3)(div u) I."""
    g = u.grid
    S = strain_values(g, g.jacobian(u.spectrum))
    return TensorField(g, S, f"S({u.name})")


def sobolev_norm(f: Field, s: float) -> float:
    """H^s norm with Fourier weight (1 + |k|^2)^s; s = 0 gives the L^2 norm."""
    if s < 0:
        raise ValueError("Sobolev index must be nonnegative")
    g = f.grid
    power = np.abs(f.spectrum) ** 2
    if power.ndim > g.d:
        power = power.reshape((-1,) + g.shape).sum(axis=0)
    weight = (1.0 + g.sobolev_k2) ** s
    return float(np.sqrt(g.volume * np.sum(weight * power)))


def dealias(f: Field) -> Field:
    g = f.grid
    return type(f).from_spectrum(g, f.spectrum * g.mask, f.name)


def l2_inner(a: Field, b: Field) -> float:
    _check_grid(a, b)
    g = a.grid
    return float(np.sum(a.values * b.values) * g.dx**g.d)


def l2_norm(a: Field) -> float:
    return float(np.sqrt(max(l2_inner(a, a), 0.0)))


# -- snapshot format ----------------------------------------------------------

_MAGIC = "zmlim-field v1"


def write_snapshot(fh: BinaryIO, field: ScalarField, t: float) -> None:
    """Write one scalar field: a text header line then raw float64 LE values."""
    name = field.name or "field"
    if any(c.isspace() for c in name):
        raise ValueError("snapshot labels may not contain whitespace")
    g = field.grid
    header = f"{_MAGIC} d={g.d} N={g.N} name={name} t={float(t)!r}\n"
    fh.write(header.encode("utf-8"))
    fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(fh: BinaryIO):
    """Read one snapshot written by :func:`write_snapshot`.

    Returns ``(field, t)`` or ``None`` at end of stream.
    """
    line = fh.readline()
    if not line:
        return None
    parts = line.decode("utf-8").rstrip("\n").split(" ")
    if " ".join(parts[:2]) != _MAGIC:
        raise ValueError(f"not a zmlim field snapshot: {line[:40]!r}")
    meta = dict(p.split("=", 1) for p in parts[2:])
    grid = Grid(int(meta["d"]), int(meta["N"]))
    count = grid.N**grid.d
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated snapshot payload")
    values = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).astype(float)
    return ScalarField(grid, values, meta["name"]), float(meta["t"])


def snapshot_bytes(field: ScalarField, t: float) -> bytes:
    buf = io.BytesIO()
    write_snapshot(buf, field, t)
    return buf.getvalue()
