import json
import math

import numpy as np
import pytest
from scipy.integrate import quad_vec

from ns_steer.fourier import cos_basis, random_field
from ns_steer.nse import (BlowUpError, PiecewiseAffine, SimConfig, SmoothSignal, constant_signal,
                          lipschitz_probe, piecewise_constant, piecewise_linear, signal_from_json,
                          signal_to_json, solve, trajectory_distance)
from ns_steer.saturation import BUILTIN_SPACES


def _quad_exp_integral(sig, t0, t1, lam):
    f = lambda s: (np.exp(-lam * (t1 - s))[:, None, None] * sig.value(s)).ravel()
    out, _ = quad_vec(f, t0, t1, epsabs=1e-13, epsrel=1e-12, points=list(sig.breakpoints()))
    return out.reshape(sig.table.size, 2, 3)


@pytest.mark.parametrize("kw, msg", [
    ({"nu": 0.0}, "nu"),
    ({"dt": 0.1}, "step bound"),
    ({"dt": 2.0, "horizon": 1.0}, "dt"),
    ({"galerkin_radius": 0}, "galerkin_radius"),
    ({"sobolev_k": -1.0}, "sobolev_k"),
])
def test_config_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        SimConfig(**kw)


def test_config_from_toml_names_the_key():
    cfg = SimConfig.from_toml("[sim]\nnu = 2.0\ndt = 0.0005\n")
    assert cfg.nu == 2.0 and cfg.dt == 0.0005
    with pytest.raises(ValueError, match="sim.nu: expected a number"):
        SimConfig.from_toml('[sim]\nnu = "x"\n')
    with pytest.raises(ValueError, match="sim.bogus: unknown key"):
        SimConfig.from_toml("[sim]\nbogus = 1\n")
    with pytest.raises(ValueError, match="sim.galerkin_radius: expected an integer"):
        SimConfig.from_toml("[sim]\ngalerkin_radius = 2.5\n")


def test_piecewise_linear_exp_integral_matches_quadrature(table, rng):
    vals = table.project(rng.standard_normal((4, table.size, 2, 3)))
    sig = piecewise_linear(table, [0.0, 0.3, 0.35, 1.0], vals)
    lam = table.k2
    for t0, t1 in [(0.0, 1.0), (0.1, 0.32), (0.33, 0.34), (0.5, 0.5 + 1e-4)]:
        got = sig.exp_integral(t0, t1, lam)
        assert np.allclose(got, _quad_exp_integral(sig, t0, t1, lam), atol=1e-11)


def test_smooth_signal_exp_integral_matches_quadrature(table, rng):
    v = table.project(rng.standard_normal((table.size, 2, 3)))
    sig = SmoothSignal(table, 1.0, lambda t: math.sin(3 * t) * v)
    assert np.allclose(sig.exp_integral(0.2, 0.21, table.k2), _quad_exp_integral(sig, 0.2, 0.21, table.k2),
                       atol=1e-13)


def test_piecewise_signal_evaluation_and_derivative(table):
    a = table.from_field(cos_basis((1, 0, 0)))
    sig = piecewise_linear(table, [0.0, 0.5, 1.0], [0 * a, a, 3 * a])
    assert np.allclose(sig.value(0.25), 0.5 * a)
    assert np.allclose(sig.value(0.75), 2 * a)
    d = sig.derivative()
    assert d.kind == "piecewise-constant"
    assert np.allclose(d.value(0.25), 2 * a) and np.allclose(d.value(0.75), 4 * a)


def test_signal_validation(table):
    z = table.zeros()
    with pytest.raises(ValueError, match="increasing"):
        piecewise_constant(table, [0.0, 0.5, 0.5], [z, z])
    with pytest.raises(ValueError, match="time 0"):
        piecewise_constant(table, [0.1, 1.0], [z])
    out = table.from_field(cos_basis((2, 1, 0)))
    with pytest.raises(ValueError, match="leave"):
        constant_signal(table, 1.0, out, space=BUILTIN_SPACES["lavt"]())


def test_signal_json_round_trip(table, rng):
    vals = table.project(rng.standard_normal((3, table.size, 2, 3)))
    sig = piecewise_constant(table, [0.0, 0.25, 1.0], vals[:2]) + 2.5 * piecewise_linear(table, [0.0, 0.5, 1.0], vals)
    back = signal_from_json(json.loads(json.dumps(signal_to_json(sig))), table)
    for t in np.linspace(0, 1, 13):
        assert np.allclose(back.value(t), sig.value(t), atol=1e-15)
    with pytest.raises(ValueError):
        signal_to_json(SmoothSignal(table, 1.0, lambda t: vals[0]))
    with pytest.raises(ValueError, match="breaks"):
        signal_from_json({"kind": "piecewise-constant"}, table)


def test_stokes_decay_is_exact(cfg):
    u0 = cos_basis((1, 2, 0))
    traj = solve(u0, None, None, None, cfg)
    i = traj.table.index[(1, 2, 0)]
    amp = traj.states[:, i, 0] @ u0.cos[0]
    assert np.allclose(amp, np.exp(-5 * traj.times), rtol=0, atol=1e-13)


def test_constant_forcing_of_one_mode(cfg, table):
    f = table.from_field(cos_basis((0, 1, 1)))
    traj = solve(table.zeros(), constant_signal(table, 1.0, f), None, None, cfg)
    expect = (1 - np.exp(-2 * traj.times)) / 2
    got = np.einsum("tkcj,kcj->t", traj.states, f)
    assert np.allclose(got, expect, atol=1e-13)


def test_unforced_energy_decays(cfg, rng):
    traj = solve(random_field(rng, 2), None, None, None, cfg)
    e = traj.energy()
    assert np.all(np.diff(e) <= 1e-14)


def test_first_order_in_time(rng):
    u0 = random_field(rng, 2, 0.3)
    finals = [solve(u0, None, None, None, SimConfig(dt=dt, horizon=0.5)).final for dt in (2e-3, 1e-3, 5e-4)]
    e1 = np.abs(finals[0] - finals[2]).max()
    e2 = np.abs(finals[1] - finals[2]).max()
    assert 2.5 < e1 / e2 < 3.5  # (2h - h/4) / (h - h/4) = 3 for a first order method


def test_breakpoints_join_the_step_grid(cfg, table):
    f = table.from_field(cos_basis((1, 0, 0)))
    sig = piecewise_constant(table, [0.0, 0.12345, 1.0], [f, -f])
    traj = solve(table.zeros(), sig, None, None, cfg, record_all=True)
    assert np.any(np.isclose(traj.times, 0.12345, atol=1e-15))


def test_horizon_mismatch_and_bad_state(cfg, table):
    with pytest.raises(ValueError, match="horizon"):
        solve(table.zeros(), constant_signal(table, 2.0, table.zeros()), None, None, cfg)
    with pytest.raises(ValueError, match="Galerkin"):
        solve(np.zeros((3, 2, 3)), None, None, None, cfg)


def test_blow_up_is_reported(table):
    cfg = SimConfig(dt=1e-3, horizon=0.1, blowup_ceiling=1.0)
    f = table.from_field(cos_basis((1, 0, 0))) * 1e4
    with pytest.raises(BlowUpError) as info:
        solve(table.zeros(), constant_signal(table, 0.1, f), None, None, cfg)
    assert info.value.norm > 1.0


def test_trajectory_distance(cfg, rng):
    a = solve(random_field(rng, 2, 0.1), None, None, None, cfg)
    assert trajectory_distance(a, a) == 0.0
    b = solve(random_field(rng, 2, 0.1), None, None, None, SimConfig(dt=5e-4))
    with pytest.raises(ValueError, match="grids"):
        trajectory_distance(a, b)


def test_lipschitz_probe_is_stable_in_size(cfg, rng):
    rows = lipschitz_probe(random_field(rng, 2, 0.05), None, None, None, SimConfig(dt=1e-3, horizon=0.3),
                           [1e-3, 1e-4], rng=rng)
    assert rows[0].ratio == pytest.approx(rows[1].ratio, rel=1e-2)
    with pytest.raises(ValueError, match="slot"):
        lipschitz_probe(random_field(rng, 1), None, None, None, SimConfig(dt=1e-3, horizon=0.1), [1e-3], slot="h")


def test_piecewise_affine_from_json_requires_keys(table):
    with pytest.raises(ValueError):
        PiecewiseAffine.from_json({"breaks": [0, 1]}, table)
