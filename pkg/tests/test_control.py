import math
from importlib import resources

import numpy as np
import pytest
import tomli

from ns_steer.control import (Decomposer, SlotCapExceeded, StaircaseSettings, SteeringProblem, _l4_gap,
                              _running_integral_sup, absorb_zeta, convexify_level,
                              reference_trajectory, run_staircase, smooth_shift)
from ns_steer.fourier import cos_basis, field_to_json
from ns_steer.nse import piecewise_constant, solve, space_residual
from ns_steer.saturation import BUILTIN_SPACES, f_extend


def _demo(name):
    return tomli.loads(resources.files("ns_steer").joinpath("demos", f"{name}.toml").read_text())


def _lift(table, space, rng):
    """A random table state inside ``space``."""
    from ns_steer.control import SpaceProjector
    return SpaceProjector(space, table).apply(table.project(rng.standard_normal((table.size, 2, 3))))


@pytest.mark.parametrize("data, msg", [
    ({"bogus": 1}, "staircase.bogus: unknown key"),
    ({"q": 2.0}, "staircase.q: expected an integer"),
    ({"rho": 1.5}, "staircase.rho"),
    ({"n_start": 8, "n_cap": 4}, "n_cap"),
    ({"decomposition": "magic"}, "decomposition"),
    ({"decomposition": 3}, "expected a string"),
    ({"flow_grid": 1}, "flow_grid"),
])
def test_settings_validation(data, msg):
    with pytest.raises(ValueError, match=msg):
        StaircaseSettings.from_mapping(data)


def test_settings_defaults():
    st = StaircaseSettings.from_mapping({"rho": 0.2})
    assert st.rho == 0.2 and st.q == 4 and st.decomposition == "min-trace"


@pytest.mark.parametrize("patch, msg", [
    ({"space": "nowhere"}, "unknown built-in space"),
    ({"epsilon": -1}, "epsilon"),
    ({"force": {"kind": "random", "in_space": True}}, "force.in_space"),
    ({"u1": {"kind": "spiral"}}, "u1.kind"),
    ({"u1": {"kind": "random", "hk_norm": -1.0}}, "u1.hk_norm"),
    ({"isotopy": {"family": "identity", "horizon": 2.0}}, "isotopy.horizon"),
    ({"extra": 1}, "extra: unknown key"),
    ({"space": {"generators": [{"mode": [1, 0, 0]}]}}, r"space.generators\[0\]"),
])
def test_problem_validation(patch, msg):
    data = _demo("generator12")
    data.update(patch)
    with pytest.raises(ValueError, match=msg):
        SteeringProblem.from_mapping(data)
    data = _demo("generator12")
    del data["space"]
    with pytest.raises(ValueError, match="space: missing"):
        SteeringProblem.from_mapping(data)


def test_demo_problems_load():
    for name in BUILTIN_SPACES:
        p = SteeringProblem.from_mapping(_demo(name))
        assert p.E.contains(p.u1)
        assert p.cfg.table().norm(p.cfg.table().from_field(p.u1), p.cfg.sobolev_k) == pytest.approx(0.2)


def test_reference_hits_both_endpoints_and_solves_the_equation():
    p = SteeringProblem.from_mapping(_demo("lsdfavt"))
    ref = reference_trajectory(p)
    table = p.cfg.table()
    assert np.allclose(ref.state(0.0), table.from_field(p.u0), atol=1e-15)
    assert np.allclose(ref.state(p.cfg.horizon), table.from_field(p.u1), atol=1e-15)
    assert ref.target_gap < p.epsilon
    traj = solve(p.u0, p.h, ref.control, None, p.cfg)
    assert np.abs(traj.states - ref.trajectory.states).max() < 1e-3


def test_reference_flow_matches_the_isotopy_without_endpoint_ramps():
    data = _demo("lavt")
    data["u1"] = {"kind": "zero"}
    ref = reference_trajectory(SteeringProblem.from_mapping(data))
    assert ref.target_gap < 1e-4


def test_smooth_shift_endpoints_and_plateaus(table, rng):
    vals = rng.standard_normal((4, table.size, 2, 3))
    zeta = piecewise_constant(table, [0.0, 0.25, 0.5, 0.75, 1.0], vals)
    zh = smooth_shift(zeta, 0.2)
    assert np.abs(zh.value(0.0)).max() == 0 and np.abs(zh.value(1.0 - 1e-15)).max() < 1e-12
    for i, mid in enumerate([0.125, 0.375, 0.625, 0.875]):
        assert np.allclose(zh.value(mid), vals[i])
    # the derivative integrates to zero because zeta_hat vanishes at both ends
    d = zh.derivative()
    total = sum(d.value(0.5 * (a + b)) * (b - a) for a, b in zip(d.breaks[:-1], d.breaks[1:]))
    assert np.abs(total).max() < 1e-12
    with pytest.raises(ValueError):
        smooth_shift(zh, 0.2)


def test_l4_gap_matches_quadrature(table, rng):
    vals = rng.standard_normal((3, table.size, 2, 3)) * 0.1
    zeta = piecewise_constant(table, [0.0, 0.2, 0.7, 1.0], vals)
    rho, k = 0.3, 1.0
    zh = smooth_shift(zeta, rho)
    t = np.linspace(0, 1, 400001)
    nrm = np.array([table.norm(zeta.value(s) - zh.value(s), k + 1) for s in t[::20]])
    num = np.trapezoid(nrm ** 4, t[::20]) ** 0.25
    assert _l4_gap(zeta, rho, k) == pytest.approx(num, rel=1e-3)


def test_running_integral_of_fast_oscillation_shrinks_like_one_over_n(table, rng, cfg):
    E0 = BUILTIN_SPACES["generator12"]()
    E1 = f_extend(E0, 2)
    v = _lift(table, E1, rng)
    eta1 = piecewise_constant(table, [0.0, 0.5, 1.0], [v, 0.5 * v])
    dec = Decomposer(E0, table, 2)
    r = [_running_integral_sup(smooth_shift(convexify_level(None, eta1, E0, n, decomposer=dec,
                                                            identity_samples=0).zeta, 0.1), 3.0)
         for n in (4, 8, 16)]
    assert r[0] / r[1] == pytest.approx(2, rel=0.05) and r[1] / r[2] == pytest.approx(2, rel=0.05)


@pytest.mark.parametrize("method", ["min-trace", "shift"])
@pytest.mark.parametrize("name", sorted(BUILTIN_SPACES))
def test_decomposition_identity(table, rng, name, method):
    E0 = BUILTIN_SPACES[name]()
    E1 = f_extend(E0, 2)
    dec = Decomposer(E0, table, 2, method, 4.0)
    v = _lift(table, E1, rng)
    eta, xis = dec.split(v)
    assert space_residual(E0, table, eta) < 1e-12
    assert all(space_residual(E0, table, x) < 1e-12 for x in xis)
    recon = eta - sum(table.quadratic(x) for x in xis)
    assert np.abs(recon - v).max() < 1e-12 * max(1.0, np.abs(v).max())
    assert dec.fallbacks == 0


def test_decomposition_of_members_and_unreachable_values(table, rng):
    E0 = BUILTIN_SPACES["lavt"]()
    dec = Decomposer(E0, table, 2, "shift")
    v = _lift(table, E0, rng)
    eta, xis = dec.split(v)
    assert xis == [] and np.allclose(eta, v)
    far = table.from_field(cos_basis((2, 2, 2)))
    with pytest.raises(ValueError, match="no witness"):
        dec.split(far)
    with pytest.raises(ValueError):
        Decomposer(E0, table, 2, "cholesky")


def test_convexified_level_checks_and_caps(table, rng):
    E0 = BUILTIN_SPACES["generator12"]()
    v = _lift(table, f_extend(E0, 2), rng)
    eta1 = piecewise_constant(table, [0.0, 0.5, 1.0], [v, -v])
    conv = convexify_level(None, eta1, E0, 4, rng=rng)
    assert conv.identity_residual < 1e-12
    p = conv.oscillation_counts[0]
    assert len(conv.zeta.breaks) - 1 == sum(2 * 4 * c for c in conv.oscillation_counts)
    # the oscillation averages to zero over each period
    period = 0.5 / 4
    w = conv.zeta.breaks
    sl = [conv.zeta.value(0.5 * (a + b)) * (b - a) for a, b in zip(w[:-1], w[1:]) if b <= period + 1e-15]
    assert len(sl) == 2 * p and np.abs(sum(sl)).max() < 1e-12
    with pytest.raises(SlotCapExceeded):
        convexify_level(None, eta1, E0, 4, max_slots=10)
    with pytest.raises(ValueError, match="piecewise constant"):
        convexify_level(None, smooth_shift(eta1, 0.1), E0, 4)
    with pytest.raises(ValueError):
        convexify_level(None, eta1, E0, 0)


def test_absorbed_shift_gives_the_same_forcing_on_average(table, rng):
    E0 = BUILTIN_SPACES["generator12"]()
    v = _lift(table, f_extend(E0, 2), rng)
    eta1 = piecewise_constant(table, [0.0, 1.0], [v])
    conv = convexify_level(None, eta1, E0, 8, identity_samples=0)
    ab = absorb_zeta(conv.zeta, conv.eta, 0.1, 3.0)
    assert ab.relaxation > 0 and ab.l4_gap > 0
    # zeta_hat vanishes at both ends, so eta_hat and eta have the same integral over the horizon
    lam = np.zeros(table.size)
    assert np.allclose(ab.eta_hat.exp_integral(0.0, 1.0, lam), conv.eta.exp_integral(0.0, 1.0, lam), atol=1e-10)


def _trivial(**patch):
    data = {"space": "generator12", "epsilon": 0.1, "sim": {"dt": 0.002}}
    data.update(patch)
    return SteeringProblem.from_mapping(data)


def test_trivial_problem_needs_no_control():
    res = run_staircase(_trivial())
    assert not res.failed
    assert res.trace.depth == 0 and res.trace.final_error == 0.0
    assert all(np.abs(v).max() == 0 for v in res.control._pool_values())


def test_single_mode_target_is_reached_at_depth_zero():
    u1 = cos_basis((1, 0, 0)) * 0.1
    res = run_staircase(_trivial(u1={"kind": "field", "field": field_to_json(u1)}))
    assert res.trace.depth == 0
    assert not res.failed and res.trace.final_error < 0.1
    assert res.trace.control_residual <= 1e-12


def test_slot_cap_is_a_budget_failure():
    data = _demo("generator12")
    data["staircase"]["max_pieces"] = 50
    res = run_staircase(SteeringProblem.from_mapping(data))
    assert res.failed and "cap" in res.trace.reason


@pytest.fixture(scope="module")
def demo_runs():
    return {name: run_staircase(SteeringProblem.from_mapping(_demo(name))) for name in BUILTIN_SPACES}


@pytest.mark.parametrize("name", sorted(BUILTIN_SPACES))
def test_demo_steering_stays_within_three_times_the_reference_norm(demo_runs, name):
    res = demo_runs[name]
    assert not res.failed, res.trace.reason
    ratio = res.run.trajectory.xk_norm() / res.reference.trajectory.xk_norm()
    assert ratio <= 3.0


@pytest.mark.parametrize("name", sorted(BUILTIN_SPACES))
def test_demo_control_lives_in_the_given_space(demo_runs, name):
    res = demo_runs[name]
    assert res.trace.levels[-1].level == 0
    assert res.trace.control_residual <= 1e-12
    assert math.isfinite(res.trace.final_error) and res.trace.final_error < res.trace.epsilon
