"""
Reproducible band-limited random fields.

Every field is drawn from numpy's Philox-4x64 counter-based bit generator
keyed by ``(seed, stream)``, so a given seed yields the same fields on every
platform regardless of the order in which the fields are requested.
"""

from __future__ import annotations

import numpy as np

from zmlim.fields import Grid, ScalarField, VectorField, leray_decompose

# named streams: one counter-based key per seeded quantity
STREAMS = {
    "v_I": 1,
    "q_I": 2,
    "psi_I": 3,
    "T_I": 4,
    "sigma_E": 5,
    "u_E": 6,
    "T_E": 7,
    "test": 99,
}


def philox(seed: int, stream: int | str) -> np.random.Generator:
    if isinstance(stream, str):
        stream = STREAMS[stream]
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def _reference_grid(d: int, kmax: int) -> Grid:
    """Grid on which fields are drawn and normalised; depends only on (d, kmax)."""
    n = 32
    while n < 16 * (kmax + 1):
        n *= 2
    return Grid(d, n)


def _box_index(grid: Grid, kmax: int):
    k1 = np.arange(-kmax, kmax + 1)
    K = np.meshgrid(*([k1] * grid.d), indexing="ij")
    return K, tuple(kj % grid.N for kj in K)


def _transfer(values: np.ndarray, src: Grid, dst: Grid, kmax: int) -> np.ndarray:
    """Copy the |k_j| <= kmax modes of ``values`` from ``src`` to ``dst``."""
    if 2 * kmax >= dst.N:
        raise ValueError(f"kmax={kmax} is not resolved on N={dst.N}")
    lead = values.shape[: values.ndim - src.d]
    _, i_src = _box_index(src, kmax)
    _, i_dst = _box_index(dst, kmax)
    spec = np.zeros(lead + dst.shape, dtype=complex)
    full = (slice(None),) * len(lead)
    spec[full + i_dst] = src.fft(values)[full + i_src]
    return dst.ifft(spec)


def _band_limited(grid: Grid, rng: np.random.Generator, kmax: int, decay: float, count: int):
    """Random modes on the box |k_j| <= kmax, drawn in a fixed order independent of N."""
    K, idx = _box_index(grid, kmax)
    box = K[0].shape
    coef = rng.standard_normal((count,) + box) + 1j * rng.standard_normal((count,) + box)
    kk = sum(kj**2 for kj in K)
    coef *= (kk > 0) * (1.0 + kk) ** (-decay / 2.0)
    spec = np.zeros((count,) + grid.shape, dtype=complex)
    spec[(slice(None),) + idx] = coef
    # the real part of ifft Hermitian-symmetrises the spectrum
    return np.array([grid.ifft(c) for c in spec])


def _draw_scalar(ref: Grid, rng, amplitude, kmax, decay) -> np.ndarray:
    vals = _band_limited(ref, rng, kmax, decay, 1)[0]
    peak = np.max(np.abs(vals))
    return vals * (amplitude / peak) if peak > 0 else vals


def _draw_vector(ref: Grid, rng, amplitude, kmax, decay) -> np.ndarray:
    vals = _band_limited(ref, rng, kmax, decay, ref.d)
    peak = np.max(np.sqrt(np.sum(vals**2, axis=0)))
    return vals * (amplitude / peak) if peak > 0 else vals


def random_scalar(grid: Grid, rng, amplitude: float = 1.0, kmax: int = 3,
                  decay: float = 2.0, name: str = "") -> ScalarField:
    """Mean-zero band-limited scalar field with sup-norm ``amplitude``.

    Fields are drawn and normalised on a reference grid that depends only on
    ``(d, kmax)`` and then transferred mode by mode, so a given generator
    state yields the same field at every resolution.
    """
    ref = _reference_grid(grid.d, kmax)
    vals = _draw_scalar(ref, rng, amplitude, kmax, decay)
    return ScalarField(grid, _transfer(vals, ref, grid, kmax), name)


def random_vector(grid: Grid, rng, amplitude: float = 1.0, kmax: int = 3,
                  decay: float = 2.0, name: str = "") -> VectorField:
    """Mean-zero band-limited vector field with max pointwise magnitude ``amplitude``."""
    ref = _reference_grid(grid.d, kmax)
    vals = _draw_vector(ref, rng, amplitude, kmax, decay)
    return VectorField(grid, _transfer(vals, ref, grid, kmax), name)


def random_solenoidal(grid: Grid, rng, amplitude: float = 1.0, kmax: int = 3,
                      decay: float = 2.0, name: str = "") -> VectorField:
    ref = _reference_grid(grid.d, kmax)
    P, _, _ = leray_decompose(VectorField(ref, _draw_vector(ref, rng, 1.0, kmax, decay)))
    peak = P.max_abs()
    vals = P.values * (amplitude / peak if peak > 0 else 0.0)
    return VectorField(grid, _transfer(vals, ref, grid, kmax), name)


def random_potential(grid: Grid, rng, grad_amplitude: float = 1.0, kmax: int = 3,
                     decay: float = 2.0, name: str = "") -> ScalarField:
    """Mean-zero scalar potential whose gradient has max magnitude ``grad_amplitude``."""
    ref = _reference_grid(grid.d, kmax)
    f = ScalarField(ref, _draw_scalar(ref, rng, 1.0, kmax, decay))
    gmax = VectorField.from_spectrum(ref, ref.grad_hat(f.spectrum)).max_abs()
    scale = grad_amplitude / gmax if gmax > 0 else 0.0
    return ScalarField(grid, _transfer(f.values * scale, ref, grid, kmax), name)
