import json

import numpy as np
import pytest

from ns_steer.fourier import bilinear_B, inner, random_field, single_mode
from ns_steer.lattice import grow_ladder, mode_frame
from ns_steer.saturation import (BUILTIN_SPACES, PATTERNS, ModeSpace, builtin_certificate, coords_to_field, f_extend,
                                 ladder_levels, lemma_closure_check, pair_arguments, pair_claim,
                                 parity_witness, space_from_lattice, verify_certificate, witness)

E3 = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]


@pytest.fixture(scope="module")
def ladders():
    return {name: ladder_levels(make(), 4, 2) for name, make in BUILTIN_SPACES.items()}


def test_builtin_dimensions():
    assert {n: f().dim for n, f in BUILTIN_SPACES.items()} == {"generator12": 12, "lavt": 8, "lsdfavt": 6}


@pytest.mark.parametrize("name, dims", [
    ("generator12", [12, 24, 88, 248, 248]),
    ("lavt", [8, 26, 128, 232, 248]),
    ("lsdfavt", [6, 18, 66, 206, 248]),
])
def test_ladder_dimensions(ladders, name, dims):
    L = ladders[name]
    assert [s.dim for s in L.levels] == dims
    assert L.covers_box(4)
    # 248 = 4 * 62 coordinates of the radius-2 box
    assert L.final.dim == 4 * 62


def test_ladder_is_nested(ladders):
    for L in ladders.values():
        for a, b in zip(L.levels, L.levels[1:]):
            assert b.includes(a)


def test_first_extension_at_a_diagonal_mode_only_reaches_the_vertical_direction():
    E1 = f_extend(BUILTIN_SPACES["generator12"]())
    comp = E1.component((1, 1, 0))
    assert comp.shape == (2, 4)
    assert E1.plane_dim((1, 1, 0), "cos") == 1 and E1.plane_dim((1, 1, 0), "sin") == 1
    frame = np.array(mode_frame((1, 1, 0)))
    for row in comp:
        vec = row[:2] @ frame + row[2:] @ frame
        assert np.allclose(np.abs(vec), [0, 0, 1], atol=1e-12)


def test_witness_reconstructs_extension_members(rng):
    E = BUILTIN_SPACES["lsdfavt"]()
    E1 = f_extend(E)
    coords = rng.standard_normal(E1.dim) @ E1.basis
    w = coords_to_field(coords, E1.modes)
    wit = witness(E, w)
    assert E.contains(wit.eta)
    assert all(E.contains(z) for z in wit.zetas)
    recon = wit.eta
    for z in wit.zetas:
        recon = recon - bilinear_B(z)
    assert (recon - w).max_abs() < 1e-10


def test_witness_rejects_fields_outside():
    with pytest.raises(ValueError):
        witness(BUILTIN_SPACES["lsdfavt"](), single_mode((2, 2, 2), cos=[1, -1, 0]))


@pytest.mark.parametrize("pattern", PATTERNS)
def test_pair_patterns_match_B(pattern):
    m, n = (1, 0, 1), (0, 1, 0)
    a, b = np.array([1.0, 2.0, -1.0]), np.array([3.0, 0.0, 1.0])
    z1, z2 = pair_arguments(m, a, n, b, pattern)
    got = bilinear_B(z1) + bilinear_B(z2)
    assert (got - pair_claim(m, a, n, b, pattern)).max_abs() < 1e-13


def test_unknown_pattern():
    with pytest.raises(ValueError):
        pair_arguments((1, 0, 0), [0, 1, 0], (0, 1, 0), [1, 0, 0], "bogus")


def test_space_membership_and_projection(rng):
    E = space_from_lattice(E3)
    u = random_field(rng, 1)
    p = E.project(u)
    assert E.contains(p)
    assert not E.contains(u)
    assert E.project(p).max_abs() == pytest.approx(p.max_abs())
    for b in E.basis_fields():
        assert abs(inner(u - p, b)) < 1e-12


def test_truncation_drops_outer_modes():
    E = space_from_lattice([(1, 0, 0), (3, 0, 1)])
    T = E.truncated(2)
    assert T.dim == 4 and T.modes == ((1, 0, 0),)


@pytest.mark.parametrize("name", sorted(BUILTIN_SPACES))
def test_builtin_certificates_verify(name):
    cert = builtin_certificate(name)
    report = verify_certificate(json.loads(json.dumps(cert.to_json())))
    assert report.ok, report.to_json()
    assert all(r for _, _, r in report.targets)


def test_tampered_certificate_fails():
    data = builtin_certificate("lsdfavt").to_json()
    data["steps"][0]["claimed"]["modes"][0]["cos"] = [9.0, 9.0, 9.0]
    report = verify_certificate(data)
    assert not report.ok


def test_certificate_with_unavailable_argument_fails():
    data = builtin_certificate("lavt").to_json()
    last = data["steps"][-1]
    last["level"] = 0
    report = verify_certificate(data)
    assert not report.ok


@pytest.mark.parametrize("bad", [[], {"name": "x"}, {"name": "x", "generators": 3, "steps": []}])
def test_malformed_certificate_reports_error(bad):
    report = verify_certificate(bad)
    assert not report.ok and report.error


def test_parity_witness_for_even_lattice():
    K = [(2, 0, 0), (0, 1, 0), (0, 0, 1)]
    w = parity_witness(K, (1, 0, 0))
    assert w is not None
    assert all(w.holds_on(k) for k in grow_ladder(K, 5, 3))
    assert not w.holds_on((1, 0, 0))
    assert parity_witness(E3, (1, 0, 0)) is None


def test_non_generator_ladder_never_fills():
    L = ladder_levels(space_from_lattice([(2, 0, 0), (0, 1, 0), (0, 0, 1)]), 6, 2)
    assert L.stable_at is not None
    assert not L.final.reaches((1, 0, 0), "cos")
    assert L.first_full_depth() is None


def test_closure_of_lattice_ladder():
    assert lemma_closure_check(E3, 1, samples=10)
    assert lemma_closure_check(E3, 2, samples=5)
    # B of the generators is not contained in E(K) itself
    assert not lemma_closure_check(E3, 1, samples=3, target=E3)


def test_ladder_argument_validation():
    E = BUILTIN_SPACES["lavt"]()
    with pytest.raises(ValueError):
        ladder_levels(E, 0)
    with pytest.raises(ValueError):
        ladder_levels(E, 2, 0)


def test_json_of_a_space():
    E = BUILTIN_SPACES["lsdfavt"]()
    data = E.to_json()
    back = ModeSpace([tuple(m) for m in data["modes"]], np.array(data["basis"]))
    assert back.includes(E) and E.includes(back)
