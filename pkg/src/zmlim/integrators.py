"""
Time steppers.

All systems are advanced with Lawson-type integrating-factor Runge-Kutta
schemes: the stiff linear part (plasma rotation at frequency 1/eps, friction,
mean-coefficient diffusion) is propagated exactly mode by mode and only the
remainder is treated explicitly.  The corrector is integrated in fast time
with classical RK4.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from zmlim.dynamics import (
    ALL_TERMS,
    DEFAULT_TOL,
    CompressibleState,
    OscPotentials,
    ScaledTerms,
    SecondOrderState,
    SlowState,
    Tolerances,
    forcing_arrays,
    mean_temperature,
    osc_explicit,
    scaled_explicit,
    second_order_rhs_arrays,
    slow_explicit,
)
from zmlim.errors import CFLViolation, ConfigError, NonZeroMean
from zmlim.fields import Grid

log = logging.getLogger(__name__)

SCHEMES = ("IF-RK4", "IF-RK2")

DIAG_COLUMNS = ("t", "eps", "mean_sigma", "min_T", "Hs_sigma", "Hs_u", "Hs_T", "energy_se")


@dataclass(frozen=True)
class StepperConfig:
    """Settings shared by every stepper.

    ``implicit_diffusion_coefficient=None`` means the mean temperature,
    refreshed at the start of each step.  ``t_final`` is reached with
    ``round(t_final/dt)`` equal steps.
    """

    dt: float = 5e-4
    t_final: float = 0.5
    scheme: str = "IF-RK4"
    implicit_diffusion_coefficient: float | None = None
    snapshot_stride: int = 10
    tol: Tolerances = DEFAULT_TOL
    check_cfl: bool = True
    sobolev_index: float = 3.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_final < self.dt:
            raise ConfigError(f"t_final={self.t_final} must be >= dt={self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))

    @property
    def h(self) -> float:
        return self.t_final / self.n_steps


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def append(self, t: float, state) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.times.append(float(t))
        self.states.append(state)

    def __len__(self) -> int:
        return len(self.times)

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DIAG_COLUMNS)
            for row in self.diagnostics:
                w.writerow([format(float(row[c]), ".17g") for c in DIAG_COLUMNS])


# -- exact linear propagators ---------------------------------------------------


def damped_rotation(a: np.ndarray, w: float, h: float):
    """Entries of exp(h M) for M = [[-a, w], [-w, 0]], a >= 0, w > 0.

    Returns ``(E11, E12, E21, E22)`` arrays.  Uses
    exp(hM) = e^{mu h}[cosh(delta h) I + sinh(delta h)/delta (M - mu I)]
    with mu = -a/2, delta^2 = a^2/4 - w^2, evaluated without overflow in
    both the oscillatory and the overdamped regime.
    """
    a = np.asarray(a, dtype=float)
    mu = -0.5 * a
    d2 = 0.25 * a * a - w * w
    osc = d2 <= 0
    om = np.sqrt(np.where(osc, -d2, 0.0))
    de = np.sqrt(np.where(osc, 0.0, d2))
    emu = np.exp(mu * h)
    # oscillatory branch
    c_osc = emu * np.cos(om * h)
    s_osc = emu * h * np.sinc(om * h / np.pi)
    # overdamped branch: delta < |mu| so mu + delta <= 0
    ep = np.exp((mu + de) * h)
    em = np.exp((mu - de) * h)
    c_ovd = 0.5 * (ep + em)
    safe = np.where(de > 0, de, 1.0)
    s_ovd = np.where(de > 0, ep * (-np.expm1(-2.0 * de * h)) / (2.0 * safe), h * ep)
    C = np.where(osc, c_osc, c_ovd)
    S = np.where(osc, s_osc, s_ovd)
    # M - mu I = [[-a/2, w], [-w, a/2]]
    return C - 0.5 * a * S, w * S, -w * S, C + 0.5 * a * S


def scaled_propagator(g: Grid, h: float, eps: float, nu: float,
                      terms: ScaledTerms = ALL_TERMS) -> Callable:
    """exp(h Lambda) for the linear part of the compressible system."""
    d = g.d
    f = 1.0 if terms.friction else 0.0
    nu = nu if terms.diffusion else 0.0
    kabs = g.kabs
    nz = kabs > 0
    a = f + (4.0 / 3.0) * nu * g.k2
    E11, E12, E21, E22 = damped_rotation(a, 1.0 / eps, h)
    trans = np.where(nz, np.exp(-(f + nu * g.k2) * h), math.exp(-f * h))
    # modes without a derivative symbol carry no rotation
    E11 = np.where(nz, E11, math.exp(-f * h))
    heat = np.exp(-(5.0 / 6.0) * nu * g.k2 * h)
    khat = g.khat
    kinv = np.where(nz, 1.0 / np.where(nz, kabs, 1.0), 0.0)

    def apply(y: np.ndarray) -> np.ndarray:
        sig, u = y[0], y[1 : d + 1]
        alpha = np.sum(khat * u, axis=0)
        beta = -1j * sig * kinv
        a2 = E11 * alpha + E12 * beta
        b2 = E21 * alpha + E22 * beta
        out = np.empty_like(y)
        out[0] = np.where(nz, 1j * kabs * b2, sig)
        out[1 : d + 1] = trans * (u - khat * alpha) + khat * a2
        out[1 : d + 1] = np.where(nz, out[1 : d + 1], E11 * u)
        out[d + 1] = heat * y[d + 1]
        return out

    return apply


def diagonal_propagator(factor: np.ndarray) -> Callable:
    return lambda y: factor * y


def limit_factors(g: Grid, h: float, nu: float, with_osc: bool) -> np.ndarray:
    d = g.d
    rows = [np.exp(-(1.0 + nu * g.k2) * h)] * d + [np.exp(-(5.0 / 6.0) * nu * g.k2 * h)]
    if with_osc:
        rows += [np.exp((-0.5 - (2.0 / 3.0) * nu * g.k2) * h)] * 2
    return np.array(rows)


# -- Lawson Runge-Kutta ---------------------------------------------------------


def lawson_step(y: np.ndarray, h: float, E_full: Callable, E_half: Callable,
                N: Callable, scheme: str = "IF-RK4") -> np.ndarray:
    """One integrating-factor step of y' = Lambda y + N(y), E(t) = exp(t Lambda)."""
    k1 = N(y)
    Ey = E_full(y)
    if scheme == "IF-RK2":
        k2 = N(E_full(y + h * k1))
        return Ey + 0.5 * h * (E_full(k1) + k2)
    k2 = N(E_half(y + 0.5 * h * k1))
    k3 = N(E_half(y) + 0.5 * h * k2)
    k4 = N(Ey + h * E_half(k3))
    return Ey + (h / 6.0) * (E_full(k1) + 2.0 * E_half(k2 + k3) + k4)


# -- CFL ------------------------------------------------------------------------


def dt_max(g: Grid, u_max: float, T_dev: float) -> float:
    """Largest admissible dt: min(0.5 dx/|u|, 0.25 dx^2 / ((4/3)|T - nu|))."""
    bounds = [math.inf]
    if u_max > 0:
        bounds.append(0.5 * g.dx / u_max)
    if T_dev > 0:
        bounds.append(0.25 * g.dx**2 / ((4.0 / 3.0) * T_dev))
    return min(bounds)


def check_cfl(g: Grid, dt: float, u: np.ndarray, T: np.ndarray) -> None:
    u_max = float(np.max(np.sqrt(np.sum(u * u, axis=0))))
    T_dev = float(np.max(np.abs(T - T.mean())))
    bound = dt_max(g, u_max, T_dev)
    if dt > bound:
        raise CFLViolation(
            f"dt={dt:.3g} exceeds CFL bound {bound:.3g} "
            f"(0.5*dx/|u|max with |u|max={u_max:.3g}, 0.25*dx^2/((4/3)|T-mean T|) "
            f"with |T-mean T|max={T_dev:.3g})"
        )


# -- diagnostics ----------------------------------------------------------------


def _hs_sq(g: Grid, fhat: np.ndarray, s: float) -> float:
    power = np.abs(fhat) ** 2
    if power.ndim > g.d:
        power = power.reshape((-1,) + g.shape).sum(axis=0)
    return float(g.volume * np.sum((1.0 + g.sobolev_k2) ** s * power))


def energy_norm_arrays(g: Grid, sig_hat, u_hat, T_hat, eps: float, s: int) -> float:
    """Sum over |alpha| <= s of sqrt(int |eps d^a sigma|^2 + |d^a u|^2 + |d^a T|^2)."""
    power = (eps**2) * np.abs(sig_hat) ** 2 + np.abs(T_hat) ** 2
    power = power + np.sum(np.abs(u_hat) ** 2, axis=0)
    k = g.k.astype(float)
    total = 0.0
    for order in range(int(s) + 1):
        for alpha in itertools.combinations_with_replacement(range(g.d), order):
            w = np.ones(g.shape)
            for j in alpha:
                w = w * k[j] ** 2
            total += math.sqrt(g.volume * float(np.sum(w * power)))
    return total


def scaled_diagnostics(g: Grid, t: float, y: np.ndarray, eps: float, s: float) -> dict:
    d = g.d
    T = g.ifft(y[d + 1])
    return {
        "t": t,
        "eps": eps,
        "mean_sigma": float(y[0][(0,) * d].real),
        "min_T": float(T.min()),
        "Hs_sigma": math.sqrt(_hs_sq(g, y[0], s)),
        "Hs_u": math.sqrt(_hs_sq(g, y[1 : d + 1], s)),
        "Hs_T": math.sqrt(_hs_sq(g, y[d + 1], s)),
        "energy_se": energy_norm_arrays(g, y[0], y[1 : d + 1], y[d + 1], eps, int(s)),
    }


def _nu(cfg: StepperConfig, g: Grid, That: np.ndarray) -> float:
    if cfg.implicit_diffusion_coefficient is not None:
        return float(cfg.implicit_diffusion_coefficient)
    return mean_temperature(g, That)


# -- compressible system --------------------------------------------------------


def step_scaled_arrays(g: Grid, y: np.ndarray, h: float, eps: float, T0: float,
                       cfg: StepperConfig, terms: ScaledTerms = ALL_TERMS) -> np.ndarray:
    nu = _nu(cfg, g, y[g.d + 1])
    E_full = scaled_propagator(g, h, eps, nu, terms)
    E_half = scaled_propagator(g, 0.5 * h, eps, nu, terms)

    def N(z):
        return scaled_explicit(g, z, eps, T0, nu, terms, cfg.tol)

    return lawson_step(y, h, E_full, E_half, N, cfg.scheme)


def step_scaled(state: CompressibleState, cfg: StepperConfig,
                terms: ScaledTerms = ALL_TERMS) -> CompressibleState:
    """Advance the compressible system by one step of size ``cfg.dt``."""
    g = state.grid
    y = step_scaled_arrays(g, state.pack(), cfg.dt, state.eps, state.T0_ref, cfg, terms)
    return CompressibleState.unpack(g, y, state.eps, state.T0_ref)


def integrate_scaled(state: CompressibleState, cfg: StepperConfig,
                     terms: ScaledTerms = ALL_TERMS, on_snapshot: Callable | None = None,
                     diagnostics: bool = True) -> Trajectory:
    """Integrate to ``cfg.t_final``; raises on floor or mean violations.

    Snapshots every ``cfg.snapshot_stride`` steps (and at t = 0) are stored
    in the trajectory and passed to ``on_snapshot(t, state)`` if given.
    """
    g = state.grid
    state.check(cfg.tol)
    if cfg.check_cfl:
        check_cfl(g, cfg.dt, state.u.values, state.T.values)
    y = state.pack()
    mean0 = float(y[0][(0,) * g.d].real)
    h, n = cfg.h, cfg.n_steps
    traj = Trajectory()

    def record(i, y):
        t = i * h
        if diagnostics:
            traj.diagnostics.append(scaled_diagnostics(g, t, y, state.eps, cfg.sobolev_index))
        if i % cfg.snapshot_stride == 0 or i == n:
            st = CompressibleState.unpack(g, y, state.eps, state.T0_ref)
            traj.append(t, st)
            if on_snapshot is not None:
                on_snapshot(t, st)

    record(0, y)
    for i in range(1, n + 1):
        y = step_scaled_arrays(g, y, h, state.eps, state.T0_ref, cfg, terms)
        drift = abs(float(y[0][(0,) * g.d].real) - mean0)
        if drift > cfg.tol.mean_tol:
            raise NonZeroMean(f"mean(sigma) drifted by {drift:.3e} at t={i * h:.6g}")
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite state at t={i * h:.6g}")
        record(i, y)
    return traj


# -- limit system ---------------------------------------------------------------


def step_limit_arrays(g: Grid, y: np.ndarray, h: float, cfg: StepperConfig,
                      with_osc: bool, heating: bool = True) -> np.ndarray:
    """Step the packed ``[v, T]`` or coupled ``[v, T, q, phi]`` limit system."""
    d = g.d
    nu = _nu(cfg, g, y[d])
    E_full = diagonal_propagator(limit_factors(g, h, nu, with_osc))
    E_half = diagonal_propagator(limit_factors(g, 0.5 * h, nu, with_osc))

    def N(z):
        out = np.empty_like(z)
        osc_hat = z[d + 1 :] if with_osc else None
        out[: d + 1] = slow_explicit(g, z[: d + 1], nu, osc_hat, heating, cfg.tol)
        if with_osc:
            T = g.ifft(z[d])
            out[d + 1 :] = osc_explicit(g, z[d + 1 :], z[:d], T, nu)
        return out

    return lawson_step(y, h, E_full, E_half, N, cfg.scheme)


def step_incompressible(state: SlowState, cfg: StepperConfig,
                        osc: OscPotentials | None = None, heating: bool = True):
    """One step of the limit system.

    Without ``osc`` this advances (v, T) alone and returns a SlowState.  With
    ``osc`` the potentials are co-integrated (they feed the temperature
    through the phase-averaged heating) and a ``(SlowState, OscPotentials)``
    pair is returned.
    """
    g = state.grid
    y = state.pack()
    if osc is None:
        return SlowState.unpack(g, step_limit_arrays(g, y, cfg.dt, cfg, False))
    y = np.concatenate([y, osc.pack()])
    y = step_limit_arrays(g, y, cfg.dt, cfg, True, heating)
    return SlowState.unpack(g, y[: g.d + 1]), OscPotentials.unpack(g, y[g.d + 1 :])


def step_osc_potentials(p: OscPotentials, slow: SlowState, cfg: StepperConfig) -> OscPotentials:
    """Advance (q, phi) one step with the slow fields frozen at ``slow``."""
    g = p.grid
    nu = _nu(cfg, g, slow.T.spectrum)
    h = cfg.dt
    v_hat, T = slow.v.spectrum, slow.T.values
    fac = np.exp((-0.5 - (2.0 / 3.0) * nu * g.k2))

    def N(z):
        return osc_explicit(g, z, v_hat, T, nu)

    y = lawson_step(p.pack(), h, diagonal_propagator(fac**h), diagonal_propagator(fac ** (0.5 * h)),
                    N, cfg.scheme)
    return OscPotentials.unpack(g, y)


def integrate_limit(slow: SlowState, osc: OscPotentials | None, cfg: StepperConfig,
                    heating: bool = True, on_snapshot: Callable | None = None) -> Trajectory:
    """Integrate the limit system; states are ``(SlowState, OscPotentials | None)``."""
    g = slow.grid
    with_osc = osc is not None
    if cfg.check_cfl:
        u_all = slow.v.values + (osc.q.grid.ifft(g.grad_hat(osc.q.spectrum)) if with_osc else 0.0)
        check_cfl(g, cfg.dt, u_all, slow.T.values)
    y = slow.pack()
    if with_osc:
        y = np.concatenate([y, osc.pack()])
    h, n = cfg.h, cfg.n_steps
    traj = Trajectory()

    def record(i, y):
        if i % cfg.snapshot_stride == 0 or i == n:
            st = (SlowState.unpack(g, y[: g.d + 1]),
                  OscPotentials.unpack(g, y[g.d + 1 :]) if with_osc else None)
            traj.append(i * h, st)
            if on_snapshot is not None:
                on_snapshot(i * h, st)

    record(0, y)
    for i in range(1, n + 1):
        y = step_limit_arrays(g, y, h, cfg, with_osc, heating)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite limit state at t={i * h:.6g}")
        record(i, y)
    return traj


# -- second-order corrector -------------------------------------------------------


def integrate_second_order(horizon_s: float, cfg: StepperConfig, slow_supplier: Callable,
                           profile_supplier: Callable, heating: bool = True) -> Trajectory:
    """Integrate the corrector from zero data over ``s in [0, horizon_s]``.

    ``cfg.dt`` is the fast-time step.  ``slow_supplier(s)`` returns a
    SlowState and ``profile_supplier(s)`` a FirstOrderProfile.  Diagnostics
    record the L^2 norms of (sigma_2f, u_2f, T_2f) and their sum.
    """
    sl0 = slow_supplier(0.0)
    g = sl0.grid
    n = max(1, int(round(horizon_s / cfg.dt)))
    ds = horizon_s / n
    cache = {}

    def F(s):
        key = round(s / ds * 2)
        if key not in cache:
            sl, pr = slow_supplier(s), profile_supplier(s)
            cache.clear()
            cache[key] = forcing_arrays(g, sl.v.spectrum, sl.T.spectrum, pr.u_1f.spectrum,
                                        pr.gradpsi_1f.spectrum, heating)
        return cache[key]

    def rhs(s, y):
        return second_order_rhs_arrays(g, y, F(s))

    y = SecondOrderState.zeros(g).pack()
    traj = Trajectory()

    def record(i, y):
        s = i * ds
        parts = [math.sqrt(_hs_sq(g, y[0], 0)), math.sqrt(_hs_sq(g, y[1 : g.d + 1], 0)),
                 math.sqrt(_hs_sq(g, y[g.d + 1], 0))]
        traj.diagnostics.append({"s": s, "sigma_2f": parts[0], "u_2f": parts[1],
                                 "T_2f": parts[2], "total": sum(parts)})
        if i % cfg.snapshot_stride == 0 or i == n:
            traj.append(s, SecondOrderState.unpack(g, y, s))

    record(0, y)
    for i in range(n):
        s = i * ds
        k1 = rhs(s, y)
        k2 = rhs(s + 0.5 * ds, y + 0.5 * ds * k1)
        k3 = rhs(s + 0.5 * ds, y + 0.5 * ds * k2)
        k4 = rhs(s + ds, y + ds * k3)
        y = y + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        m = abs(float(y[0][(0,) * g.d].real))
        if m > cfg.tol.mean_tol:
            raise NonZeroMean(f"mean(sigma_2f) = {m:.3e} at s={s + ds:.6g}")
        record(i + 1, y)
    return traj
