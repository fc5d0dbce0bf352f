import math

import numpy as np
import pytest

from conftest import small_config
from zmlim.config import ExperimentConfig
from zmlim.dynamics import CompressibleState, OscPotentials, SlowState
from zmlim.errors import ConfigError
from zmlim.fields import Grid, ScalarField, VectorField, grad, leray_decompose
from zmlim.harness import (
    METRICS,
    build_initial_data,
    check_poisson_identity,
    energy_norm_diag,
    fit_rates,
    resonance_average_check,
    run_convergence_sweep,
    seeded_data,
    thread_cap,
)
from zmlim.random_fields import random_potential, random_scalar, random_solenoidal


def tiny_sweep_config():
    cfg = small_config(N=16, kmax=1, amp=0.1)
    cfg.model.tau = 0.05
    cfg.sweep.eps_list = (0.1, 0.05, 0.025)
    return cfg


def test_initial_data_identities():
    cfg = small_config()
    data = seeded_data(cfg)
    st, slow, osc = build_initial_data(cfg, 0.05, data=data)
    assert check_poisson_identity(st, data) <= 1e-11
    assert abs(st.sigma.mean()) <= 1e-15
    P, Qp, q = leray_decompose(data.Qu_I)
    assert P.max_abs() < 1e-13
    assert np.max(np.abs(grad(osc.q).values - data.Qu_I.values)) < 1e-13
    assert np.array_equal(osc.phi.values, data.psi_I.values)
    assert np.array_equal(slow.v.values, data.v_I.values)
    norms = data.hypothesis_norms(cfg.model.s)
    assert all(math.isfinite(v) and v > 0 for v in norms.values())


def test_initial_data_deterministic_and_eps_structure():
    cfg = small_config()
    a, _, _ = build_initial_data(cfg, 0.1)
    b, _, _ = build_initial_data(cfg, 0.1)
    c, _, _ = build_initial_data(cfg, 0.05)
    assert np.array_equal(a.pack(), b.pack())
    data = seeded_data(cfg)
    assert np.allclose((a.u - c.u).values, 0.05 * data.u_E.values, atol=1e-15)
    cfg.data.seed = 8
    d, _, _ = build_initial_data(cfg, 0.1)
    assert not np.allclose(a.pack(), d.pack())


def test_well_prepared_data():
    cfg = small_config()
    cfg.data.well_prepared = True
    st, slow, osc = build_initial_data(cfg, 0.05)
    assert osc.q.max_abs() == 0 and osc.phi.max_abs() == 0
    assert st.sigma.max_abs() == 0
    assert np.array_equal(st.u.values, slow.v.values)


def test_initial_data_rejected():
    cfg = small_config()
    cfg.data.T_I = 0.7
    with pytest.raises(ConfigError):
        build_initial_data(cfg, 0.05)
    cfg = small_config(amp=30.0)
    with pytest.raises(ConfigError):
        build_initial_data(cfg, 0.5)


def test_energy_norm_diag_single_mode():
    g = Grid(2, 16)
    u = VectorField(g, np.array([np.sin(g.x[0]), 0 * g.x[0]]))
    st = CompressibleState(ScalarField.zeros(g), u, ScalarField.zeros(g), 0.1)
    assert energy_norm_diag(st, 0) == pytest.approx(math.sqrt(2 * math.pi**2), rel=1e-13)
    # d/dx1 keeps the amplitude, d/dx2 kills it
    assert energy_norm_diag(st, 1) == pytest.approx(2 * math.sqrt(2 * math.pi**2), rel=1e-13)


def test_fit_rates():
    eps = [0.1, 0.05, 0.025, 0.0125]
    slope, icpt, ok = fit_rates(eps, [3 * e**1.5 for e in eps])
    assert slope == pytest.approx(1.5, rel=1e-12) and icpt == pytest.approx(math.log(3), rel=1e-12)
    assert ok
    slope, _, ok = fit_rates(eps, [e**0.5 for e in eps])
    assert not ok
    s, _, ok = fit_rates(eps, [0.0, 1, 1, 1])
    assert math.isnan(s) and not ok
    with pytest.raises(ConfigError):
        fit_rates(eps[:2], [1, 2])


def test_thread_cap(monkeypatch):
    cfg = ExperimentConfig()
    monkeypatch.setenv("ZMLIM_THREADS", "2")
    assert thread_cap(cfg) == 2
    cfg.sweep.threads = 8
    assert thread_cap(cfg) == 2
    monkeypatch.delenv("ZMLIM_THREADS")
    assert thread_cap(cfg) == 8


def test_sweep_csv_and_determinism(tmp_path, monkeypatch):
    cfg = tiny_sweep_config()
    monkeypatch.setenv("ZMLIM_THREADS", "1")
    r1 = run_convergence_sweep(cfg)
    monkeypatch.setenv("ZMLIM_THREADS", "3")
    r2 = run_convergence_sweep(cfg)
    r1.write_csv(tmp_path / "a")
    r2.write_csv(tmp_path / "b")
    for name in ("sweep.csv", "rates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    lines = (tmp_path / "a" / "sweep.csv").read_text().splitlines()
    assert lines[0].split(",") == ["eps", *METRICS, "status"]
    assert len(lines) == 4 and all(l.endswith(",ok") for l in lines[1:])
    assert float(lines[1].split(",")[0]) == 0.1
    rates = (tmp_path / "a" / "rates.csv").read_text().splitlines()
    assert rates[0] == "metric,slope,intercept,pass" and len(rates) == 1 + len(METRICS)
    assert set(r1.slopes) == set(METRICS)


def test_sweep_with_corrector():
    cfg = tiny_sweep_config()
    cfg.sweep.second_order = True
    res = run_convergence_sweep(cfg)
    assert "sup_u_app_Hs" in res.slopes
    for m in res.metrics:
        assert m.sup_u_app_Hs is not None and math.isfinite(m.sup_u_app_Hs)


def test_sweep_failed_run_is_excluded():
    cfg = tiny_sweep_config()
    cfg.sweep.eps_list = (0.5, 0.1, 0.05, 0.025)
    cfg.data.sigma_E = 4.0  # density floor breached only at eps = 0.5
    cfg.grid.N = 16
    res = run_convergence_sweep(cfg)
    assert res.status[0].startswith("failed:")
    assert res.metrics[0] is None
    assert res.survivors == [1, 2, 3]


def random_pair(g, rng):
    slow = SlowState(random_solenoidal(g, rng, 0.4, kmax=3), 1.0 + random_scalar(g, rng, 0.2, kmax=3))
    p = OscPotentials(random_potential(g, rng, 0.4, kmax=3), random_potential(g, rng, 0.4, kmax=3))
    return slow, p


def test_resonance_check(g2, rng):
    slow, p = random_pair(g2, rng)
    assert resonance_average_check(slow, OscPotentials.zeros(g2)) <= 1e-14
    r64 = resonance_average_check(slow, p, 64)
    r32 = resonance_average_check(slow, p, 32)
    assert r64 <= 1e-8 and r32 <= 1e-8
    with pytest.raises(ValueError):
        resonance_average_check(slow, p, 8)


def test_resonance_check_detects_wrong_closed_form(g2, rng, monkeypatch):
    import zmlim.harness as H

    slow, p = random_pair(g2, rng)
    real = H.rhs_osc_potentials

    def flipped(pp, sl):
        dq, dp = real(pp, sl)
        return 0.9 * dq, dp

    monkeypatch.setattr(H, "rhs_osc_potentials", flipped)
    assert resonance_average_check(slow, p) > 1e-4


def test_energy_norm_examples():
    g = Grid(2, 16)
    z = ScalarField.zeros(g)
    assert energy_norm_diag(CompressibleState(z, VectorField.zeros(g), z, 0.3), 3) == 0.0
    sig = ScalarField(g, np.sin(g.x[0]))
    assert energy_norm_diag(CompressibleState(sig, VectorField.zeros(g), z, 1.0), 0) == pytest.approx(
        math.sqrt(2 * math.pi**2), rel=1e-13)
    # only sigma present: the norm is linear in eps
    a = energy_norm_diag(CompressibleState(sig, VectorField.zeros(g), z, 0.2), 3)
    b = energy_norm_diag(CompressibleState(sig, VectorField.zeros(g), z, 0.1), 3)
    assert a == pytest.approx(2 * b, rel=1e-13)


def test_resolution_adequacy():
    from zmlim.harness import limit_initial_data, measure_errors, stepper_config
    from zmlim.integrators import integrate_limit

    out = {}
    for N in (32, 64):
        cfg = ExperimentConfig()
        cfg.grid.N = N
        cfg.model.tau = 0.2
        data = seeded_data(cfg)
        slow, osc = limit_initial_data(data)
        lim = integrate_limit(slow, osc, stepper_config(cfg))
        out[N] = measure_errors(cfg, 0.1, lim, data).as_dict()
    for k in METRICS:
        assert abs(out[64][k] - out[32][k]) <= 0.05 * out[32][k], k


def test_approximation_is_eps_uniform():
    from zmlim.dynamics import SecondOrderState, compose_approximation
    from zmlim.fields import sobolev_norm
    from zmlim.harness import limit_initial_data, stepper_config
    from zmlim.integrators import integrate_limit

    cfg = ExperimentConfig()
    cfg.grid.N = 32
    cfg.model.tau = 0.1
    slow, osc = limit_initial_data(seeded_data(cfg))
    lim = integrate_limit(slow, osc, stepper_config(cfg))
    z = SecondOrderState.zeros(slow.grid)
    sups = []
    for eps in cfg.sweep.eps_list:
        sups.append(max(sobolev_norm(compose_approximation(t, eps, sl, p, z).u_app, cfg.model.s)
                        for t, (sl, p) in zip(lim.times, lim.states)))
    assert (max(sups) - min(sups)) <= 0.10 * min(sups)


def test_well_prepared_errors_are_smaller():
    from zmlim.harness import limit_initial_data, measure_errors, stepper_config
    from zmlim.integrators import integrate_limit

    res = {}
    for wp in (False, True):
        cfg = ExperimentConfig()
        cfg.grid.N = 32
        cfg.model.tau = 0.1
        cfg.data.well_prepared = wp
        data = seeded_data(cfg)
        slow, osc = limit_initial_data(data)
        lim = integrate_limit(slow, osc, stepper_config(cfg))
        res[wp] = [measure_errors(cfg, e, lim, data).sup_u_Hs for e in cfg.sweep.eps_list]
    assert all(w < i for w, i in zip(res[True], res[False]))


def test_initial_metrics_linear_in_perturbations():
    from zmlim.dynamics import compose_first_order
    from zmlim.fields import sobolev_norm

    def t0_errors(scale):
        cfg = small_config()
        for k in ("sigma_E", "u_E", "T_E"):
            setattr(cfg.data, k, scale * getattr(cfg.data, k))
        st, slow, osc = build_initial_data(cfg, 0.05)
        prof = compose_first_order(0.0, 0.05, osc)
        return (sobolev_norm(st.eps * (st.sigma - prof.sigma_1f), 3),
                sobolev_norm(st.u - slow.v - prof.u_1f, 3), sobolev_norm(st.T - slow.T, 3))

    for a, b in zip(t0_errors(0.5), t0_errors(1.0)):
        assert b == pytest.approx(2 * a, rel=1e-10)
