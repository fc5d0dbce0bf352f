"""
Experiment orchestration: seeded ill-prepared initial data, the eps-sweep
with error measurement and log-log rate fitting, the phase-average oracle for
the oscillation equations and the weighted energy norm.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from zmlim.config import ExperimentConfig
from zmlim.dynamics import (
    CompressibleState,
    OscPotentials,
    SlowState,
    Tolerances,
    compose_first_order,
    rhs_osc_potentials,
)
from zmlim.errors import ConfigError, FloorViolation, NonZeroMean, ZmlimError
from zmlim.fields import (
    Grid,
    ScalarField,
    VectorField,
    dealias,
    grad,
    l2_norm,
    laplacian,
    leray_decompose,
    poisson_solve,
    sobolev_norm,
    strain,
)
from zmlim.integrators import (
    StepperConfig,
    energy_norm_arrays,
    integrate_limit,
    integrate_scaled,
    integrate_second_order,
)
from zmlim.random_fields import philox, random_potential, random_scalar, random_solenoidal, random_vector

log = logging.getLogger(__name__)

METRICS = (
    "sup_eps_sigma_Hs",
    "sup_u_Hs",
    "sup_T_Hs",
    "sup_gradpsi_Hs",
    "l2t_u_Hs1",
    "l2t_T_Hs1",
)


@dataclass
class ErrorMetrics:
    sup_eps_sigma_Hs: float = 0.0
    sup_u_Hs: float = 0.0
    sup_T_Hs: float = 0.0
    sup_gradpsi_Hs: float = 0.0
    l2t_u_Hs1: float = 0.0
    l2t_T_Hs1: float = 0.0
    # filled only when the corrector is switched on
    sup_u_app_Hs: float | None = None

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


@dataclass
class SweepResult:
    eps: list
    metrics: list  # ErrorMetrics or None for failed runs
    status: list
    slopes: dict = field(default_factory=dict)
    intercepts: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)
    slope_min: float = 0.8

    @property
    def survivors(self) -> list:
        return [i for i, m in enumerate(self.metrics) if m is not None]

    @property
    def all_pass(self) -> bool:
        return bool(self.passed) and all(self.passed.values())

    def write_csv(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("eps",) + METRICS + ("status",))
            for e, m, st in zip(self.eps, self.metrics, self.status):
                vals = m.as_dict() if m is not None else {k: float("nan") for k in METRICS}
                w.writerow([_g17(e)] + [_g17(vals[k]) for k in METRICS] + [st])
        with open(os.path.join(out_dir, "rates.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("metric", "slope", "intercept", "pass"))
            for k in self.slopes:
                w.writerow([k, _g17(self.slopes[k]), _g17(self.intercepts[k]),
                            "true" if self.passed[k] else "false"])


def _g17(x: float) -> str:
    return format(float(x), ".17g")


# -- initial data -----------------------------------------------------------------


@dataclass
class InitialData:
    v_I: VectorField
    Qu_I: VectorField
    psi_I: ScalarField
    T_I: ScalarField
    sigma_E: ScalarField
    u_E: VectorField
    T_E: ScalarField

    def hypothesis_norms(self, s: float) -> dict:
        """Norms of the seeded data entering the convergence hypotheses."""
        return {
            "Lap_psi_I_Hs1": sobolev_norm(laplacian(self.psi_I), s + 1),
            "Qu_I_Hs1": sobolev_norm(self.Qu_I, s + 1),
            "v_I_Hs3": sobolev_norm(self.v_I, s + 3),
            "T_I_Hs3": sobolev_norm(self.T_I - self.T_I.mean(), s + 3),
            "sigma_E_Hs": sobolev_norm(self.sigma_E, s),
            "u_E_Hs": sobolev_norm(self.u_E, s),
            "T_E_Hs": sobolev_norm(self.T_E, s),
        }


def seeded_data(cfg: ExperimentConfig) -> InitialData:
    g = Grid(cfg.grid.d, cfg.grid.N)
    dc = cfg.data
    seed, km, dec = dc.seed, dc.kmax, dc.decay
    v_I = random_solenoidal(g, philox(seed, "v_I"), dc.v_I, km, dec, "v_I")
    T_I = (cfg.model.T0 + random_scalar(g, philox(seed, "T_I"), dc.T_I, km, dec)).renamed("T_I")
    if dc.well_prepared:
        q = ScalarField.zeros(g)
        psi_I = ScalarField.zeros(g, "psi_I")
        zero_s, zero_v = ScalarField.zeros(g), VectorField.zeros(g)
        return InitialData(v_I, grad(q).renamed("Qu_I"), psi_I, T_I,
                           zero_s.renamed("sigma_E"), zero_v.renamed("u_E"), zero_s.renamed("T_E"))
    q = random_potential(g, philox(seed, "q_I"), dc.q_I, km, dec)
    psi_I = random_potential(g, philox(seed, "psi_I"), dc.psi_I, km, dec, "psi_I")
    sigma_E = random_scalar(g, philox(seed, "sigma_E"), dc.sigma_E, km, dec, "sigma_E")
    u_E = random_vector(g, philox(seed, "u_E"), dc.u_E, km, dec, "u_E")
    T_E = random_scalar(g, philox(seed, "T_E"), dc.T_E, km, dec, "T_E")
    return InitialData(v_I, grad(q).renamed("Qu_I"), psi_I, T_I, sigma_E, u_E, T_E)


def build_initial_data(cfg: ExperimentConfig, eps: float, tol: Tolerances | None = None,
                       data: InitialData | None = None):
    """Return ``(CompressibleState, SlowState, OscPotentials)`` for one eps.

    The compressible data are ``sigma = Lap psi_I + eps sigma_E``,
    ``u = v_I + Qu_I + eps u_E`` and ``T = T_I + eps T_E``.
    """
    tol = tol or default_tolerances(cfg)
    D = data or seeded_data(cfg)
    g = D.v_I.grid
    if D.T_I.min() < cfg.model.T_L:
        raise ConfigError(f"T_I reaches {D.T_I.min():.4g} below T_L = {cfg.model.T_L}")
    sigma = (laplacian(D.psi_I) + eps * D.sigma_E).renamed("sigma")
    u = (D.v_I + D.Qu_I + eps * D.u_E).renamed("u")
    T = (D.T_I + eps * D.T_E).renamed("T")
    state = CompressibleState(sigma, u, T, eps, cfg.model.T0)
    try:
        state.check(tol)
    except (FloorViolation, NonZeroMean) as exc:
        raise ConfigError(f"initial data rejected at eps={eps}: {exc}") from exc
    return (state,) + limit_initial_data(D)


def limit_initial_data(data: InitialData):
    """Return ``(SlowState, OscPotentials)``; these do not depend on eps."""
    _, _, q = leray_decompose(data.Qu_I)
    return SlowState(data.v_I, data.T_I), OscPotentials(q.renamed("q"), data.psi_I.renamed("phi"))


def default_tolerances(cfg: ExperimentConfig) -> Tolerances:
    return Tolerances(mean_tol=1e-10, rho_floor=0.1, T_floor=cfg.model.T_L / 4.0)


def stepper_config(cfg: ExperimentConfig, tol: Tolerances | None = None) -> StepperConfig:
    st = cfg.stepper
    return StepperConfig(
        dt=st.dt,
        t_final=cfg.model.tau,
        scheme=st.scheme,
        snapshot_stride=int(round(st.snapshot_dt / st.dt)),
        tol=tol or default_tolerances(cfg),
        sobolev_index=cfg.model.s,
    )


# -- sweep ---------------------------------------------------------------------------


def _hs(g: Grid, fhat: np.ndarray, s: float) -> float:
    power = np.abs(fhat) ** 2
    if power.ndim > g.d:
        power = power.reshape((-1,) + g.shape).sum(axis=0)
    return math.sqrt(g.volume * float(np.sum((1.0 + g.sobolev_k2) ** s * power)))


def _interp_limit(times, states, t):
    """Linear interpolation of limit snapshots at slow time t."""
    j = int(np.searchsorted(times, t, side="right")) - 1
    j = min(max(j, 0), len(times) - 2)
    w = (t - times[j]) / (times[j + 1] - times[j])
    (s0, p0), (s1, p1) = states[j], states[j + 1]
    slow = SlowState(s0.v * (1 - w) + s1.v * w, s0.T * (1 - w) + s1.T * w)
    osc = OscPotentials(p0.q * (1 - w) + p1.q * w, p0.phi * (1 - w) + p1.phi * w)
    return slow, osc


def measure_errors(cfg: ExperimentConfig, eps: float, limit_traj, data: InitialData | None = None,
                   second_order: bool = False) -> ErrorMetrics:
    """Integrate the compressible system at one eps and measure its distance to the limit."""
    tol = default_tolerances(cfg)
    state0, _, _ = build_initial_data(cfg, eps, tol, data)
    g = state0.grid
    s = cfg.model.s
    limit_at = dict(zip(np.round(np.array(limit_traj.times) / cfg.stepper.snapshot_dt).astype(int),
                        limit_traj.states))
    rows = []

    corrector = None
    if second_order:
        corrector = _corrector_snapshots(cfg, eps, limit_traj)

    def on_snapshot(t, st):
        slow, osc = limit_at[int(round(t / cfg.stepper.snapshot_dt))]
        prof = compose_first_order(t, eps, osc)
        e_sig = eps * (st.sigma.spectrum - prof.sigma_1f.spectrum)
        e_u = st.u.spectrum - slow.v.spectrum - prof.u_1f.spectrum
        e_T = st.T.spectrum - slow.T.spectrum
        e_gp = g.grad_hat(st.psi.spectrum) - prof.gradpsi_1f.spectrum
        row = [t, _hs(g, e_sig, s), _hs(g, e_u, s), _hs(g, e_T, s), _hs(g, e_gp, s),
               _hs(g, e_u, s + 1), _hs(g, e_T, s + 1)]
        if corrector is not None:
            st2 = corrector[int(round(t / cfg.stepper.snapshot_dt))]
            row.append(_hs(g, e_u - eps * st2.u_2f.spectrum, s))
        rows.append(row)

    integrate_scaled(state0, stepper_config(cfg, tol), on_snapshot=on_snapshot, diagnostics=False)
    R = np.array(rows)
    t = R[:, 0]
    m = ErrorMetrics(
        sup_eps_sigma_Hs=float(R[:, 1].max()),
        sup_u_Hs=float(R[:, 2].max()),
        sup_T_Hs=float(R[:, 3].max()),
        sup_gradpsi_Hs=float(R[:, 4].max()),
        l2t_u_Hs1=math.sqrt(float(np.trapezoid(R[:, 5] ** 2, t))),
        l2t_T_Hs1=math.sqrt(float(np.trapezoid(R[:, 6] ** 2, t))),
    )
    if corrector is not None:
        m.sup_u_app_Hs = float(R[:, 7].max())
    return m


def _corrector_snapshots(cfg: ExperimentConfig, eps: float, limit_traj) -> dict:
    """Second-order corrector sampled at the sweep snapshot times, keyed by snapshot index."""
    times = np.array(limit_traj.times)
    snap_s = cfg.stepper.snapshot_dt / eps
    sub = max(1, math.ceil(snap_s / cfg.stepper.ds - 1e-9))
    ds = snap_s / sub
    horizon = cfg.model.tau / eps
    scfg = StepperConfig(dt=ds, t_final=horizon, snapshot_stride=sub,
                         tol=default_tolerances(cfg), check_cfl=False)

    def slow_at(s):
        return _interp_limit(times, limit_traj.states, min(eps * s, times[-1]))[0]

    def prof_at(s):
        t = min(eps * s, times[-1])
        return compose_first_order(eps * s, eps, _interp_limit(times, limit_traj.states, t)[1])

    traj = integrate_second_order(horizon, scfg, slow_at, prof_at,
                                  heating=cfg.model.oscillation_heating)
    return {int(round(s / snap_s)): st for s, st in zip(traj.times, traj.states)}


def fit_rates(eps, values, slope_min: float = 0.8):
    """Least-squares fit of log(values) = slope*log(eps) + intercept."""
    eps = np.asarray(eps, float)
    values = np.asarray(values, float)
    if len(eps) < 3:
        raise ConfigError(f"rate fit requires >= 3 eps values, got {len(eps)}")
    if np.any(values <= 0):
        return float("nan"), float("nan"), False
    slope, intercept = np.polyfit(np.log(eps), np.log(values), 1)
    return float(slope), float(intercept), bool(slope >= slope_min)


def thread_cap(cfg: ExperimentConfig) -> int:
    env = os.environ.get("ZMLIM_THREADS")
    cap = cfg.sweep.threads or (int(env) if env else (os.cpu_count() or 1))
    if env:
        cap = min(cap, int(env))
    return max(1, cap)


def run_convergence_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Run the compressible system for every eps and fit error rates against eps."""
    cfg.validate()
    eps_list = list(cfg.sweep.eps_list)
    if len(eps_list) < 3:
        raise ConfigError(f"rate fit requires >= 3 eps values, got {len(eps_list)}")
    data = seeded_data(cfg)
    tol = default_tolerances(cfg)
    if data.T_I.min() < cfg.model.T_L:
        raise ConfigError(f"T_I reaches {data.T_I.min():.4g} below T_L = {cfg.model.T_L}")
    slow0, osc0 = limit_initial_data(data)
    limit = integrate_limit(slow0, osc0, stepper_config(cfg, tol),
                            heating=cfg.model.oscillation_heating)

    def job(e):
        try:
            return measure_errors(cfg, e, limit, data, cfg.sweep.second_order), "ok"
        except (ZmlimError, FloatingPointError) as exc:
            log.warning("eps=%g failed: %s", e, exc)
            return None, f"failed:{type(exc).__name__}"

    with ThreadPoolExecutor(max_workers=min(thread_cap(cfg), len(eps_list))) as pool:
        outcomes = list(pool.map(job, eps_list))
    res = SweepResult(eps_list, [o[0] for o in outcomes], [o[1] for o in outcomes],
                      slope_min=cfg.sweep.slope_min)
    ok = res.survivors
    if len(ok) < 3:
        log.warning("only %d eps runs survived; no rates fitted", len(ok))
        return res
    e_ok = [eps_list[i] for i in ok]
    names = list(METRICS) + (["sup_u_app_Hs"] if cfg.sweep.second_order else [])
    for k in names:
        vals = [getattr(res.metrics[i], k) for i in ok]
        res.slopes[k], res.intercepts[k], res.passed[k] = fit_rates(e_ok, vals, cfg.sweep.slope_min)
    return res


# -- oracles and diagnostics ------------------------------------------------------------


def _rotated_nonlinearities(slow: SlowState, p: OscPotentials, tau: float):
    """Gradient parts of the two rotated-frame nonlinearities at phase ``tau``, eps = 0."""
    v, T = slow.v, slow.T
    c, s = math.cos(tau), math.sin(tau)
    gq, gp = grad(p.q), grad(p.phi)
    U = v + c * gq + s * gp
    G = U.grid.jacobian(U.spectrum)
    adv = VectorField(U.grid, np.einsum("j...,ij...->i...", U.values, G))
    SU = strain(U)
    TS = type(SU)(U.grid, T.values[None, None] * SU.values)
    visc = VectorField.from_spectrum(U.grid, np.sum(1j * U.grid.kd[None] * dealias(TS).spectrum, axis=1))
    I1 = -dealias(adv) + visc - U - grad(T)
    lap_mix = c * laplacian(p.phi) - s * laplacian(p.q)
    I2 = -dealias(U * lap_mix)
    return leray_decompose(I1)[1], leray_decompose(I2)[1]


def resonance_average_check(slow: SlowState, p: OscPotentials, n_quad: int = 64) -> float:
    """L^2 residual between the phase average of the rotated nonlinearity and the closed form.

    The average is taken with the trapezoid rule on ``n_quad`` nodes in
    [0, 2 pi); it is compared in the ``2 d/dt grad q`` normalisation with
    twice the gradient of the potential increments returned by
    :func:`zmlim.dynamics.rhs_osc_potentials`.
    """
    if n_quad < 16:
        raise ValueError("n_quad must be >= 16")
    g = slow.grid
    acc_q = VectorField.zeros(g)
    acc_p = VectorField.zeros(g)
    for j in range(n_quad):
        tau = 2.0 * math.pi * j / n_quad
        QI1, QI2 = _rotated_nonlinearities(slow, p, tau)
        c, s = math.cos(tau), math.sin(tau)
        acc_q = acc_q + (c * QI1 - s * QI2)
        acc_p = acc_p + (c * QI2 + s * QI1)
    acc_q = acc_q * (1.0 / n_quad)
    acc_p = acc_p * (1.0 / n_quad)
    dq, dphi = rhs_osc_potentials(p, slow)
    rq = 2.0 * acc_q - 2.0 * grad(dq)
    rp = 2.0 * acc_p - 2.0 * grad(dphi)
    return float(math.hypot(l2_norm(rq), l2_norm(rp)))


def energy_norm_diag(state: CompressibleState, s_index: int) -> float:
    """Sum over |alpha| <= s of the L^2 norms of (eps d^a sigma, d^a u, d^a T)."""
    return energy_norm_arrays(state.grid, state.sigma.spectrum, state.u.spectrum,
                              state.T.spectrum, state.eps, s_index)


def check_poisson_identity(state: CompressibleState, data: InitialData) -> float:
    """Max deviation between poisson_solve(sigma - eps sigma_E) and psi_I."""
    psi = poisson_solve(state.sigma - state.eps * data.sigma_E, mean_tol=1e-10)
    return (psi - data.psi_I).max_abs()
