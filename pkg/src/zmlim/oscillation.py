"""
The plasma-oscillation operator on velocity/electric-field pairs.

A pair ``(u, E)`` is stored through its Hodge split

    u = v + grad q,    E = e + grad phi,    div v = div e = 0,

so the operator ``L`` (zero on the divergence-free parts, the quarter turn
``(grad q, grad phi) -> (-grad phi, grad q)`` on the gradient parts) and its
group ``exp(tau L)`` act on the two potentials only and are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from zmlim.fields import Grid, ScalarField, VectorField, grad, leray_decompose

__all__ = [
    "PhasePair",
    "ComplexPair",
    "apply_L",
    "exp_tauL",
    "project_P0",
    "project_Pi",
    "project_Pmi",
]


@dataclass(frozen=True)
class PhasePair:
    """Velocity-like / field-like pair held as ``(v, e, q, phi)``."""

    v: VectorField
    e: VectorField
    q: ScalarField
    phi: ScalarField

    @classmethod
    def from_fields(cls, u: VectorField, E: VectorField) -> "PhasePair":
        v, _, q = leray_decompose(u)
        e, _, phi = leray_decompose(E)
        return cls(v, e, q, phi)

    @classmethod
    def from_potentials(cls, q: ScalarField, phi: ScalarField) -> "PhasePair":
        g = q.grid
        return cls(VectorField.zeros(g, "v"), VectorField.zeros(g, "e"), q, phi)

    @property
    def grid(self) -> Grid:
        return self.q.grid

    @property
    def grad_q(self) -> VectorField:
        return grad(self.q)

    @property
    def grad_phi(self) -> VectorField:
        return grad(self.phi)

    @property
    def u_comp(self) -> VectorField:
        return (self.v + self.grad_q).renamed("u")

    @property
    def e_comp(self) -> VectorField:
        return (self.e + self.grad_phi).renamed("E")

    def _map(self, fn, other=None):
        if other is None:
            return PhasePair(fn(self.v), fn(self.e), fn(self.q), fn(self.phi))
        return PhasePair(fn(self.v, other.v), fn(self.e, other.e),
                         fn(self.q, other.q), fn(self.phi, other.phi))

    def __add__(self, other: "PhasePair") -> "PhasePair":
        return self._map(lambda a, b: a + b, other)

    def __sub__(self, other: "PhasePair") -> "PhasePair":
        return self._map(lambda a, b: a - b, other)

    def __mul__(self, c: float) -> "PhasePair":
        return self._map(lambda a: a * c)

    __rmul__ = __mul__

    def __neg__(self) -> "PhasePair":
        return self * -1.0

    def norm(self) -> float:
        """L^2 x L^2 norm of (u, E)."""
        u, E = self.u_comp, self.e_comp
        g = self.grid
        return float(np.sqrt((np.sum(u.values**2) + np.sum(E.values**2)) * g.dx**g.d))


@dataclass(frozen=True)
class ComplexPair:
    real: PhasePair
    imag: PhasePair

    @property
    def grid(self) -> Grid:
        return self.real.grid

    def __add__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.real + other.real, self.imag + other.imag)

    def __sub__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.real - other.real, self.imag - other.imag)

    def norm(self) -> float:
        return float(np.hypot(self.real.norm(), self.imag.norm()))


def _zero_like(p: PhasePair) -> ScalarField:
    return ScalarField.zeros(p.grid)


def apply_L(p: PhasePair) -> PhasePair:
    """L kills the divergence-free parts and maps (grad q, grad phi) to (-grad phi, grad q)."""
    zero_v = VectorField.zeros(p.grid, "v")
    return PhasePair(zero_v, zero_v.renamed("e"), -p.phi, p.q)


def exp_tauL(tau: float, p: PhasePair) -> PhasePair:
    """Rotate the gradient parts by angle ``tau``; divergence-free parts unchanged."""
    c, s = np.cos(tau), np.sin(tau)
    return PhasePair(p.v, p.e, c * p.q - s * p.phi, c * p.phi + s * p.q)


def project_P0(p: PhasePair) -> PhasePair:
    z = _zero_like(p)
    return PhasePair(p.v, p.e, z, z)


def _gradient_only(q: ScalarField, phi: ScalarField) -> PhasePair:
    return PhasePair.from_potentials(q, phi)


def _project_pm(p, sign: int) -> ComplexPair:
    # P_{+i}(grad q, grad phi) = 1/2 (grad q + i grad phi, -i grad q + grad phi)
    # P_{-i} flips the sign of the imaginary part.
    if isinstance(p, ComplexPair):
        a = _project_pm(p.real, sign)
        b = _project_pm(p.imag, sign)
        # P(a + i b) = P a + i P b
        return ComplexPair(a.real - b.imag, a.imag + b.real)
    re = _gradient_only(0.5 * p.q, 0.5 * p.phi)
    im = _gradient_only(sign * 0.5 * p.phi, -sign * 0.5 * p.q)
    return ComplexPair(re, im)


def project_Pi(p) -> ComplexPair:
    """Spectral projection onto the eigenspace of L with eigenvalue +i."""
    return _project_pm(p, +1)


def project_Pmi(p) -> ComplexPair:
    """Spectral projection onto the eigenspace of L with eigenvalue -i."""
    return _project_pm(p, -1)
