"""
Right-hand sides of the scaled compressible system, its incompressible limit,
the slow equations for the oscillation potentials and the second-order
fast-time corrector.

Every assembler comes in two layers: a kernel working on packed spectral
arrays (used by the time steppers) and a field-level wrapper.  Packed layouts:

* compressible / second-order state: ``[sigma, u_1..u_d, T]``
* slow state:                         ``[v_1..v_d, T]``
* oscillation potentials:             ``[q, phi]``

All quadratic and higher products are formed on the grid and truncated with
the two-thirds rule; linear terms are applied exactly in Fourier space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from zmlim.errors import DensityFloor, NonZeroMean, TemperatureFloor
from zmlim.fields import (
    Grid,
    ScalarField,
    VectorField,
    poisson_solve,
    strain_values,
)
from zmlim.oscillation import PhasePair, exp_tauL

TWO_THIRDS = 2.0 / 3.0


@dataclass(frozen=True)
class Tolerances:
    mean_tol: float = 1e-10
    rho_floor: float = 0.1
    T_floor: float = 0.125


@dataclass(frozen=True)
class ScaledTerms:
    """Switches for the compressible right-hand side.

    ``nonlinear=False`` drops every term outside the exactly integrated linear
    part (plasma rotation, friction, mean-coefficient diffusion).
    """

    nonlinear: bool = True
    diffusion: bool = True
    friction: bool = True


DEFAULT_TOL = Tolerances()
ALL_TERMS = ScaledTerms()


# -- states -------------------------------------------------------------------


@dataclass(frozen=True)
class CompressibleState:
    sigma: ScalarField
    u: VectorField
    T: ScalarField
    eps: float
    T0_ref: float = 1.0

    @property
    def grid(self) -> Grid:
        return self.sigma.grid

    @cached_property
    def psi(self) -> ScalarField:
        return poisson_solve(self.sigma, mean_tol=np.inf)

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.sigma.spectrum[None], self.u.spectrum, self.T.spectrum[None]]
        )

    @classmethod
    def unpack(cls, grid: Grid, y: np.ndarray, eps: float, T0_ref: float = 1.0):
        vals = grid.ifft(y)
        return cls(
            ScalarField(grid, vals[0], "sigma"),
            VectorField(grid, vals[1 : grid.d + 1], "u"),
            ScalarField(grid, vals[grid.d + 1], "T"),
            eps,
            T0_ref,
        )

    def check(self, tol: Tolerances = DEFAULT_TOL) -> None:
        _check_floors(1.0 + self.eps * self.sigma.values, self.T.values, tol)
        m = self.sigma.mean()
        if abs(m) > tol.mean_tol:
            raise NonZeroMean(f"mean(sigma) = {m:.3e} exceeds {tol.mean_tol:.1e}")


@dataclass(frozen=True)
class SlowState:
    v: VectorField
    T: ScalarField

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @cached_property
    def Pi(self) -> ScalarField:
        return recover_pressure(self)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.v.spectrum, self.T.spectrum[None]])

    @classmethod
    def unpack(cls, grid: Grid, y: np.ndarray):
        vals = grid.ifft(y)
        return cls(VectorField(grid, vals[: grid.d], "v"), ScalarField(grid, vals[grid.d], "T"))


@dataclass(frozen=True)
class OscPotentials:
    q: ScalarField
    phi: ScalarField

    @property
    def grid(self) -> Grid:
        return self.q.grid

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(ScalarField.zeros(grid, "q"), ScalarField.zeros(grid, "phi"))

    def pack(self) -> np.ndarray:
        return np.array([self.q.spectrum, self.phi.spectrum])

    @classmethod
    def unpack(cls, grid: Grid, y: np.ndarray):
        vals = grid.ifft(y)
        return cls(ScalarField(grid, vals[0], "q"), ScalarField(grid, vals[1], "phi"))


@dataclass(frozen=True)
class FirstOrderProfile:
    u_1f: VectorField
    gradpsi_1f: VectorField
    sigma_1f: ScalarField
    psi_1f: ScalarField

    @property
    def grid(self) -> Grid:
        return self.u_1f.grid


@dataclass(frozen=True)
class SecondOrderState:
    sigma_2f: ScalarField
    u_2f: VectorField
    T_2f: ScalarField
    s: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.sigma_2f.grid

    @cached_property
    def psi_2f(self) -> ScalarField:
        return poisson_solve(self.sigma_2f, mean_tol=np.inf)

    @classmethod
    def zeros(cls, grid: Grid, s: float = 0.0):
        return cls(ScalarField.zeros(grid, "sigma_2f"), VectorField.zeros(grid, "u_2f"),
                   ScalarField.zeros(grid, "T_2f"), s)

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.sigma_2f.spectrum[None], self.u_2f.spectrum, self.T_2f.spectrum[None]]
        )

    @classmethod
    def unpack(cls, grid: Grid, y: np.ndarray, s: float = 0.0):
        vals = grid.ifft(y)
        return cls(
            ScalarField(grid, vals[0], "sigma_2f"),
            VectorField(grid, vals[1 : grid.d + 1], "u_2f"),
            ScalarField(grid, vals[grid.d + 1], "T_2f"),
            s,
        )


@dataclass(frozen=True)
class ApproxState:
    sigma_app: ScalarField
    u_app: VectorField
    T_app: ScalarField
    psi_app: ScalarField
    flags: dict = field(default_factory=dict)


# -- helpers ------------------------------------------------------------------


def _check_floors(n: np.ndarray, T: np.ndarray, tol: Tolerances) -> None:
    nmin = float(np.min(n))
    if nmin < tol.rho_floor:
        raise DensityFloor(f"1 + eps*sigma reached {nmin:.4g} < {tol.rho_floor}")
    Tmin = float(np.min(T))
    if Tmin < tol.T_floor:
        raise TemperatureFloor(f"T reached {Tmin:.4g} < {tol.T_floor}")


def _adv(a: np.ndarray, G: np.ndarray) -> np.ndarray:
    """(a . grad) b from a and the jacobian G[i, j] = d_j b_i."""
    return np.einsum("j...,ij...->i...", a, G)


def _contract(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,ij...->...", A, B)


def _div_rows(g: Grid, Fhat: np.ndarray) -> np.ndarray:
    """Spectral divergence of each row of a tensor spectrum: d_j F_ij."""
    return np.sum(1j * g.kd[None] * Fhat, axis=1)


def _visc_symbol(g: Grid, uhat: np.ndarray) -> np.ndarray:
    """Spectrum of div S(u) for constant unit coefficient: Lap u + (1/3) grad div u."""
    kdotu = np.sum(g.kd * uhat, axis=0)
    return -g.k2 * uhat - (1.0 / 3.0) * g.kd * kdotu


def mean_temperature(g: Grid, That: np.ndarray) -> float:
    return float(That[(0,) * g.d].real)


# -- compressible system ------------------------------------------------------


def scaled_linear(g: Grid, y: np.ndarray, eps: float, nu: float,
                  terms: ScaledTerms = ALL_TERMS) -> np.ndarray:
    """Linear part integrated exactly by the steppers."""
    d = g.d
    sig, u, T = y[0], y[1 : d + 1], y[d + 1]
    out = np.zeros_like(y)
    psi = g.inv_lap_hat(sig)
    out[0] = -g.div_hat(u) / eps
    du = g.grad_hat(psi) / eps
    if terms.friction:
        du = du - u
    if terms.diffusion:
        du = du + nu * _visc_symbol(g, u)
        out[d + 1] = -(5.0 / 6.0) * nu * g.k2 * T
    out[1 : d + 1] = du
    return out


def scaled_explicit(g: Grid, y: np.ndarray, eps: float, T0: float, nu: float,
                    terms: ScaledTerms = ALL_TERMS, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Everything in the compressible right-hand side not in :func:`scaled_linear`."""
    d = g.d
    phys = g.ifft(y)
    sig, u, T = phys[0], phys[1 : d + 1], phys[d + 1]
    n = 1.0 + eps * sig
    _check_floors(n, T, tol)
    out = np.zeros_like(y)
    if not terms.nonlinear:
        return out
    That = y[d + 1]
    G = g.jacobian(y[1 : d + 1])
    divu = np.trace(G, axis1=0, axis2=1)
    S = strain_values(g, G)
    gsig = g.ifft(g.grad_hat(y[0]))
    gT = g.ifft(g.grad_hat(That))

    mask = g.mask
    # products needing a transform; stacked to share one FFT call
    prods = [sig[None] * u, _adv(u, G), (eps * T / n)[None] * gsig]
    if terms.diffusion:
        prods.append((n * T)[None, None] * S)
        prods.append((n * T)[None] * gT)
    flat = [p.reshape((-1,) + g.shape) for p in prods]
    scal = np.array([
        TWO_THIRDS * T * divu + np.sum(u * gT, axis=0),
        TWO_THIRDS * T * _contract(S, G),
        np.sum(u * u, axis=0) / 3.0,
    ])
    hat = g.fft(np.concatenate(flat + [scal])) * mask
    i = 0
    sig_u = hat[i : i + d]; i += d
    u_gu = hat[i : i + d]; i += d
    press = hat[i : i + d]; i += d
    out[0] = -g.div_hat(sig_u)
    du = -u_gu - press - g.grad_hat(That)
    dT = np.zeros(g.shape, dtype=complex)
    if terms.diffusion:
        flux = hat[i : i + d * d].reshape((d, d) + g.shape); i += d * d
        hflux = hat[i : i + d]; i += d
        visc = g.ifft(_div_rows(g, flux)) / n[None]
        cond = g.ifft(g.div_hat(hflux)) / n
        vc = g.fft(np.concatenate([visc, cond[None]])) * mask
        du = du + vc[:d] - nu * _visc_symbol(g, y[1 : d + 1])
        dT = dT + (5.0 / 6.0) * (vc[d] + nu * g.k2 * That)
    dT = dT - hat[i] - hat[i + 1] + hat[i + 2]
    relax = -That.copy()
    relax[(0,) * d] += T0
    dT = dT + 0.5 * eps**2 * relax
    out[1 : d + 1] = du
    out[d + 1] = dT
    return out


def rhs_scaled(state: CompressibleState, tol: Tolerances = DEFAULT_TOL,
               terms: ScaledTerms = ALL_TERMS):
    """Full right-hand side ``(dsigma, du, dT)`` of the scaled system.

    Raises DensityFloor / TemperatureFloor on floor violations and NonZeroMean
    if the density fluctuation is not mean-zero.
    """
    g = state.grid
    m = state.sigma.mean()
    if abs(m) > tol.mean_tol:
        raise NonZeroMean(f"mean(sigma) = {m:.3e} exceeds {tol.mean_tol:.1e}")
    y = state.pack()
    nu = mean_temperature(g, y[g.d + 1])
    r = scaled_linear(g, y, state.eps, nu, terms) + scaled_explicit(
        g, y, state.eps, state.T0_ref, nu, terms, tol
    )
    return (
        ScalarField.from_spectrum(g, r[0], "dsigma"),
        VectorField.from_spectrum(g, r[1 : g.d + 1], "du"),
        ScalarField.from_spectrum(g, r[g.d + 1], "dT"),
    )


# -- incompressible limit -----------------------------------------------------


def _heating_average(g: Grid, T: np.ndarray, a_hat: np.ndarray, b_hat: np.ndarray) -> np.ndarray:
    """Fast-phase average of (1/3)|w|^2 - (2/3) T S(w):grad w for w = cos grad a + sin grad b."""
    total = np.zeros(g.shape)
    for p_hat in (a_hat, b_hat):
        w_hat = g.grad_hat(p_hat)
        w = g.ifft(w_hat)
        G = g.jacobian(w_hat)
        total += np.sum(w * w, axis=0) / 6.0 - T * _contract(strain_values(g, G), G) / 3.0
    return total


def slow_explicit(g: Grid, y: np.ndarray, nu: float, osc_hat: np.ndarray | None = None,
                  heating: bool = True, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Explicit part of the limit system; ``osc_hat = [q, phi]`` adds oscillation heating."""
    d = g.d
    vhat, That = y[:d], y[d]
    v = g.ifft(vhat)
    T = g.ifft(That)
    Tmin = float(np.min(T))
    if Tmin < tol.T_floor:
        raise TemperatureFloor(f"T reached {Tmin:.4g} < {tol.T_floor}")
    G = g.jacobian(vhat)
    S = strain_values(g, G)
    gT = g.ifft(g.grad_hat(That))
    prods = [_adv(v, G), (T[None, None] * S).reshape((d * d,) + g.shape), T[None] * gT]
    src = -np.sum(v * gT, axis=0) - TWO_THIRDS * T * _contract(S, G) + np.sum(v * v, axis=0) / 3.0
    if heating and osc_hat is not None:
        src = src + _heating_average(g, T, osc_hat[0], osc_hat[1])
    hat = g.fft(np.concatenate(prods + [src[None]])) * g.mask
    adv = hat[:d]
    flux = hat[d : d + d * d].reshape((d, d) + g.shape)
    hflux = hat[d + d * d : 2 * d + d * d]
    out = np.zeros_like(y)
    out[:d] = g.leray_hat(-adv + _div_rows(g, flux)) + nu * g.k2 * vhat
    out[d] = (5.0 / 6.0) * (g.div_hat(hflux) + nu * g.k2 * That) + hat[-1]
    return out


def slow_linear(g: Grid, y: np.ndarray, nu: float) -> np.ndarray:
    d = g.d
    out = np.zeros_like(y)
    out[:d] = -(1.0 + nu * g.k2) * y[:d]
    out[d] = -(5.0 / 6.0) * nu * g.k2 * y[d]
    return out


def rhs_incompressible(state: SlowState, tol: Tolerances = DEFAULT_TOL,
                       osc: OscPotentials | None = None, heating: bool = True):
    """``(dv, dT)`` of the incompressible limit; ``dv`` is Leray-projected.

    When ``osc`` is given and ``heating`` is on, the phase-averaged heating
    from the gradient oscillations is added to ``dT``.
    """
    g = state.grid
    y = state.pack()
    nu = mean_temperature(g, y[g.d])
    osc_hat = osc.pack() if osc is not None else None
    r = slow_linear(g, y, nu) + slow_explicit(g, y, nu, osc_hat, heating, tol)
    return (
        VectorField.from_spectrum(g, r[: g.d], "dv"),
        ScalarField.from_spectrum(g, r[g.d], "dT"),
    )


def recover_pressure(state: SlowState) -> ScalarField:
    """Mean-zero Pi with Lap Pi = div(-v.grad v - grad T + div(T S(v)) - v)."""
    g = state.grid
    d = g.d
    vhat, That = state.v.spectrum, state.T.spectrum
    v, T = state.v.values, state.T.values
    G = g.jacobian(vhat)
    S = strain_values(g, G)
    hat = g.fft(np.concatenate([_adv(v, G), (T[None, None] * S).reshape((d * d,) + g.shape)]))
    hat = hat * g.mask
    R = -hat[:d] - g.grad_hat(That) + _div_rows(g, hat[d:].reshape((d, d) + g.shape)) - vhat
    return ScalarField.from_spectrum(g, g.inv_lap_hat(g.div_hat(R)), "Pi")


# -- oscillation potentials ---------------------------------------------------


def osc_explicit(g: Grid, y: np.ndarray, v_hat: np.ndarray, T: np.ndarray, nu: float) -> np.ndarray:
    """Explicit part of the potential equations for packed ``y = [q, phi]``.

    For each potential p the full increment is

        dp = 1/2 Lap^{-1} div{ -(grad p . grad) v - (v . grad) grad p
                               - v Lap p + div[T S(grad p)] } - p/2 ,

    of which ``-p/2 - (2/3) nu |k|^2 p`` is integrated exactly.
    """
    d = g.d
    v = g.ifft(v_hat)
    Gv = g.jacobian(v_hat)
    blocks = []
    for p_hat in y:
        w_hat = g.grad_hat(p_hat)
        w = g.ifft(w_hat)
        Gw = g.jacobian(w_hat)
        lap = g.ifft(g.lap_hat(p_hat))
        vec = -_adv(w, Gv) - _adv(v, Gw) - v * lap[None]
        flux = T[None, None] * strain_values(g, Gw)
        blocks.append(np.concatenate([vec, flux.reshape((d * d,) + g.shape)]))
    hat = g.fft(np.array(blocks)) * g.mask
    out = np.zeros_like(y)
    for m in range(2):
        B = hat[m, :d] + _div_rows(g, hat[m, d:].reshape((d, d) + g.shape))
        out[m] = 0.5 * g.inv_lap_hat(g.div_hat(B)) + TWO_THIRDS * nu * g.k2 * y[m]
    return out


def osc_linear(g: Grid, y: np.ndarray, nu: float) -> np.ndarray:
    return (-0.5 - TWO_THIRDS * nu * g.k2) * y


def rhs_osc_potentials(p: OscPotentials, slow: SlowState):
    """Potential-level increments ``(dq, dphi)``; ``grad dq`` is the velocity-slot rate."""
    g = p.grid
    y = p.pack()
    nu = slow.T.mean()
    r = osc_linear(g, y, nu) + osc_explicit(g, y, slow.v.spectrum, slow.T.values, nu)
    return ScalarField.from_spectrum(g, r[0], "dq"), ScalarField.from_spectrum(g, r[1], "dphi")


# -- first-order profile ------------------------------------------------------


def compose_first_order(t: float, eps: float, p: OscPotentials) -> FirstOrderProfile:
    """Rotate (grad q, grad phi) by exp(-(t/eps) L); sigma_1f = Lap psi_1f."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pair = exp_tauL(-t / eps, PhasePair.from_potentials(p.q, p.phi))
    g = p.grid
    psi = pair.phi.renamed("psi_1f")
    return FirstOrderProfile(
        u_1f=pair.grad_q.renamed("u_1f"),
        gradpsi_1f=pair.grad_phi.renamed("gradpsi_1f"),
        sigma_1f=ScalarField.from_spectrum(g, g.lap_hat(psi.spectrum), "sigma_1f"),
        psi_1f=psi,
    )


def profile_arrays(g: Grid, phase: float, q_hat: np.ndarray, phi_hat: np.ndarray):
    """Spectra (u_1f, gradpsi_1f, psi_1f) at fast phase ``phase = t/eps``."""
    c, s = np.cos(phase), np.sin(phase)
    # exp(-phase L): q' = c q + s phi, phi' = c phi - s q
    qr = c * q_hat + s * phi_hat
    pr = c * phi_hat - s * q_hat
    return g.grad_hat(qr), g.grad_hat(pr), pr


# -- second-order corrector ---------------------------------------------------


def forcing_arrays(g: Grid, v_hat: np.ndarray, T_hat: np.ndarray, u1_hat: np.ndarray,
                   g1_hat: np.ndarray, heating: bool = True):
    """Spectra of (F_sigma, F_u, F_T) for the second-order corrector."""
    d = g.d
    v, T = g.ifft(v_hat), g.ifft(T_hat)
    u1, g1 = g.ifft(u1_hat), g.ifft(g1_hat)
    sig1_hat = g.div_hat(g1_hat)
    sig1 = g.ifft(sig1_hat)
    div_u1 = g.ifft(g.div_hat(u1_hat))
    Gv, Gu1, Gg1 = g.jacobian(v_hat), g.jacobian(u1_hat), g.jacobian(g1_hat)
    gT = g.ifft(g.grad_hat(T_hat))
    Sv, Su1, Sg1 = strain_values(g, Gv), strain_values(g, Gu1), strain_values(g, Gg1)
    vu = v + u1

    vec_sigma = _adv(g1, Gv) + _adv(v, Gg1) + v * sig1[None]
    vec_u = _adv(u1, Gv) + _adv(v, Gu1) + v * div_u1[None]
    direct_u = -_adv(u1, Gv + Gu1) - _adv(v, Gu1)
    FT = (
        -TWO_THIRDS * T * div_u1
        - np.sum(u1 * gT, axis=0)
        - TWO_THIRDS * T * _contract(Sv, Gu1)
        - TWO_THIRDS * T * _contract(Su1, Gv + Gu1)
        - np.sum(v * v, axis=0) / 3.0
        + np.sum(vu * vu, axis=0) / 3.0
    )
    if heating:
        # remove the phase average, which belongs to the slow temperature
        FT = FT - (np.sum(u1 * u1 + g1 * g1, axis=0) / 6.0
                   - T * (_contract(Su1, Gu1) + _contract(Sg1, Gg1)) / 3.0)
    stack = np.concatenate([
        vec_sigma,
        (T[None, None] * Sg1).reshape((d * d,) + g.shape),
        sig1[None] * vu,
        vec_u,
        (T[None, None] * Su1).reshape((d * d,) + g.shape),
        direct_u,
        FT[None],
    ])
    hat = g.fft(stack) * g.mask
    i = 0
    a = hat[i : i + d]; i += d
    tsg = hat[i : i + d * d].reshape((d, d) + g.shape); i += d * d
    sflux = hat[i : i + d]; i += d
    b = hat[i : i + d]; i += d
    tsu = hat[i : i + d * d].reshape((d, d) + g.shape); i += d * d
    direct = hat[i : i + d]; i += d
    FT_hat = hat[i]

    Fs = 0.5 * g.div_hat(a - _div_rows(g, tsg)) + 0.5 * sig1_hat - g.div_hat(sflux)
    visc_u1 = _div_rows(g, tsu)
    Fu = 0.5 * g.gradient_part_hat(b - visc_u1) - 0.5 * u1_hat + direct + visc_u1
    return Fs, Fu, FT_hat


def forcing_second_order(slow: SlowState, prof: FirstOrderProfile, heating: bool = True):
    """Forcings ``(F_sigma, F_u, F_T)`` driving the second-order corrector.

    ``heating=True`` subtracts the fast-phase mean of the temperature forcing,
    which is carried by the slow temperature equation instead.
    """
    g = slow.grid
    Fs, Fu, FT = forcing_arrays(g, slow.v.spectrum, slow.T.spectrum, prof.u_1f.spectrum,
                                prof.gradpsi_1f.spectrum, heating)
    return (
        ScalarField.from_spectrum(g, Fs, "F_sigma"),
        VectorField.from_spectrum(g, Fu, "F_u"),
        ScalarField.from_spectrum(g, FT, "F_T"),
    )


def second_order_rhs_arrays(g: Grid, y: np.ndarray, F) -> np.ndarray:
    d = g.d
    Fs, Fu, FT = F
    out = np.empty_like(y)
    psi = g.inv_lap_hat(y[0])
    out[0] = Fs - g.div_hat(y[1 : d + 1])
    out[1 : d + 1] = Fu + g.grad_hat(psi)
    out[d + 1] = FT
    return out


def rhs_second_order(st: SecondOrderState, F, mean_tol: float = 1e-10):
    """Increments ``(F_sigma - div u_2f, F_u + grad psi_2f, F_T)``."""
    g = st.grid
    m = st.sigma_2f.mean()
    if abs(m) > mean_tol:
        raise NonZeroMean(f"mean(sigma_2f) = {m:.3e} exceeds {mean_tol:.1e}")
    Fs, Fu, FT = F
    spectra = tuple(f.spectrum if hasattr(f, "spectrum") else f for f in (Fs, Fu, FT))
    r = second_order_rhs_arrays(g, st.pack(), spectra)
    return (
        ScalarField.from_spectrum(g, r[0], "dsigma_2f"),
        VectorField.from_spectrum(g, r[1 : g.d + 1], "du_2f"),
        ScalarField.from_spectrum(g, r[g.d + 1], "dT_2f"),
    )


# -- approximation ------------------------------------------------------------


def compose_approximation(t: float, eps: float, slow: SlowState, p: OscPotentials,
                          st2: SecondOrderState, T_L: float = 0.5,
                          enforce_floor: bool = True) -> ApproxState:
    """sigma_app = sigma_1f + eps sigma_2f, u_app = v + u_1f + eps u_2f, T_app = T + eps T_2f."""
    prof = compose_first_order(t, eps, p)
    T_app = (slow.T + eps * st2.T_2f).renamed("T_app")
    ok = T_app.min() >= 0.5 * T_L
    if enforce_floor and not ok:
        raise TemperatureFloor(f"T_app reached {T_app.min():.4g} < T_L/2 = {0.5 * T_L}")
    return ApproxState(
        sigma_app=(prof.sigma_1f + eps * st2.sigma_2f).renamed("sigma_app"),
        u_app=(slow.v + prof.u_1f + eps * st2.u_2f).renamed("u_app"),
        T_app=T_app,
        psi_app=(prof.psi_1f + eps * st2.psi_2f).renamed("psi_app"),
        flags={"T_app_floor_ok": bool(ok)},
    )


# -- symmetriser --------------------------------------------------------------


def symmetrizer_matrices(n, v, T, eps: float):
    """Pointwise A_0 and A_j for the (n, v, T) form of the model.

    ``n`` and ``T`` have shape ``(M,)``, ``v`` shape ``(d, M)``.  Returns
    ``A0`` of shape ``(M, d+2, d+2)`` and ``A`` of shape ``(d, M, d+2, d+2)``.
    """
    n, T, v = np.asarray(n, float), np.asarray(T, float), np.asarray(v, float)
    d, M = v.shape
    m = d + 2
    e2 = eps * eps
    A0 = np.zeros((M, m, m))
    A0[:, 0, 0] = T / (e2 * n * n)
    A0[:, 1 : d + 1, 1 : d + 1] = np.eye(d)
    A0[:, m - 1, m - 1] = 3.0 / (2.0 * e2 * T)
    A = np.zeros((d, M, m, m))
    for j in range(d):
        A[j, :, 0, 1 + j] = n
        A[j, :, 1 + j, 0] = T / (e2 * n)
        A[j, :, 1 + j, m - 1] = 1.0 / e2
        A[j, :, m - 1, 1 + j] = TWO_THIRDS * T
        A[j] += v[j][:, None, None] * np.eye(m)
    return A0, A


def error_symmetrizer_matrices(sigma, u_app, T_app, eps: float):
    """A_0^E and A_j^E of the symmetric hyperbolic form of the error system."""
    sigma, T, u = np.asarray(sigma, float), np.asarray(T_app, float), np.asarray(u_app, float)
    d, M = u.shape
    m = d + 2
    n = 1.0 + eps * sigma
    A0 = np.zeros((M, m, m))
    A0[:, 0, 0] = eps * eps * T / (n * n)
    A0[:, 1 : d + 1, 1 : d + 1] = np.eye(d)
    A0[:, m - 1, m - 1] = 3.0 / (2.0 * T)
    A = np.zeros((d, M, m, m))
    for j in range(d):
        A[j, :, 0, 1 + j] = n / eps
        A[j, :, 1 + j, 0] = eps * T / n
        A[j, :, 1 + j, m - 1] = 1.0
        A[j, :, m - 1, 1 + j] = TWO_THIRDS * T
        A[j] += u[j][:, None, None] * np.eye(m)
    return A0, A


def symmetrizer_check(state: CompressibleState, tol: Tolerances = DEFAULT_TOL,
                      form: str = "model") -> float:
    """Max over nodes and directions of ||A_0 A_j - (A_0 A_j)^T||_inf.

    ``form="model"`` uses n = 1 + eps*sigma, v = u and T of the state;
    ``form="error"`` reads (sigma, u, T) as (sigma^eps, u_app, T_app).
    """
    g = state.grid
    eps = state.eps
    _check_floors(1.0 + eps * state.sigma.values, state.T.values, tol)
    sigma = state.sigma.values.ravel()
    T = state.T.values.ravel()
    u = state.u.values.reshape(g.d, -1)
    if form == "model":
        A0, A = symmetrizer_matrices(1.0 + eps * sigma, u, T, eps)
    elif form == "error":
        A0, A = error_symmetrizer_matrices(sigma, u, T, eps)
    else:
        raise ValueError(f"unknown symmetriser form {form!r}")
    worst = 0.0
    for j in range(g.d):
        B = A0 @ A[j]
        asym = np.max(np.abs(B - np.swapaxes(B, 1, 2)), axis=(1, 2))
        worst = max(worst, float(np.max(asym)))
    return worst
