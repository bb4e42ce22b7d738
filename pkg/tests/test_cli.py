import csv
import hashlib
import json
from importlib import resources

import pytest
from click.testing import CliRunner

from ns_steer.cli import main


def _invoke(tmp_path, *args, config=None, out="out"):
    argv = ["--out", str(tmp_path / out)]
    if config is not None:
        cfg = tmp_path / "config.toml"
        cfg.write_text(config)
        argv += ["--config", str(cfg)]
    result = CliRunner().invoke(main, argv + list(args), catch_exceptions=False)
    return result, tmp_path / out


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_lattice_is_generator(tmp_path):
    res, out = _invoke(tmp_path, "lattice", "is-generator", "--modes", "[[2,0,0],[0,1,0],[0,0,1]]")
    assert res.exit_code == 0
    data = json.loads((out / "lattice.json").read_text())
    assert data["is_generator"] is False and data["determinant_gcd"] == 2


def test_lattice_member_with_witness(tmp_path):
    res, out = _invoke(tmp_path, "lattice", "member", "--modes", "[[2,0,0],[0,1,0],[0,0,1]]", "--target", "[1,0,0]")
    assert res.exit_code == 0
    data = json.loads((out / "lattice.json").read_text())
    assert data["member"] is False and data["witness"]["modulus"] == 2


def test_lattice_ladder_from_config(tmp_path):
    res, out = _invoke(tmp_path, "lattice", "ladder", "--depth", "2", "--radius", "2",
                       config="[lattice]\nmodes = [[1,0,0],[0,1,0],[0,0,1]]\n")
    assert res.exit_code == 0
    data = json.loads((out / "lattice.json").read_text())
    assert data["sizes"][0] == 3 and [1, 1, 0] in data["levels"][1]


def test_bad_json_argument_is_an_error(tmp_path):
    res, out = _invoke(tmp_path, "lattice", "is-generator", "--modes", "[[1,0")
    assert res.exit_code == 1
    assert _manifest(out)["exit_status"] == 1


def test_saturate_builtin_writes_ladder_and_manifest(tmp_path):
    res, out = _invoke(tmp_path, "--seed", "3", "saturate", "--builtin", "lsdfavt", "--depth", "4")
    assert res.exit_code == 0
    summary = json.loads((out / "saturation.json").read_text())
    assert summary["dims"] == [6, 18, 66, 206, 248] and summary["unreached_modes"] == []
    with open(out / "ladder.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["depth", "mode", "plane", "reached"] and len(rows) == 1 + 4 * 62 * 2
    man = _manifest(out)
    assert man["seed"] == 3 and man["command"] == "saturate" and "wall_time_s" in man
    assert {"numpy", "scipy", "ns_steer"} <= set(man["versions"])
    for f in man["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]


def test_saturate_non_generator_reports_parity(tmp_path):
    res, out = _invoke(tmp_path, "saturate", config="[saturate]\nspace = {modes = [[2,0,0],[0,1,0],[0,0,1]]}\ndepth = 3\n")
    assert res.exit_code == 0
    summary = json.loads((out / "saturation.json").read_text())
    assert [1, 0, 0] in summary["unreached_modes"]
    assert summary["parity_witnesses"]["1 0 0"]["modulus"] == 2


def test_verify_certificate(tmp_path):
    res, out = _invoke(tmp_path, "verify-certificate", "--builtin", "lsdfavt")
    assert res.exit_code == 0
    assert json.loads((out / "verification.json").read_text())["ok"]
    bad = {"name": "broken", "generators": [], "steps": [{"level": 1}]}
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    res, _ = _invoke(tmp_path, "verify-certificate", "--file", str(tmp_path / "bad.json"), out="out2")
    assert res.exit_code == 1


SIM = """
[sim]
nu = 1.0
dt = 0.002
horizon = 0.2

[initial]
kind = "random"
hk_norm = 0.5

[output]
checkpoints = [0.0, 0.1, 0.2]
"""


def test_simulate_is_deterministic(tmp_path):
    r1, o1 = _invoke(tmp_path, "--seed", "5", "simulate", config=SIM, out="a")
    r2, o2 = _invoke(tmp_path, "--seed", "5", "simulate", config=SIM, out="b")
    r3, o3 = _invoke(tmp_path, "--seed", "6", "simulate", config=SIM, out="c")
    assert r1.exit_code == r2.exit_code == r3.exit_code == 0
    a = (o1 / "trajectory.csv").read_bytes()
    assert a == (o2 / "trajectory.csv").read_bytes()
    assert a != (o3 / "trajectory.csv").read_bytes()
    snaps = json.loads((o1 / "snapshots.json").read_text())
    assert [s["time"] for s in snaps] == [0.0, 0.1, 0.2]
    assert _manifest(o1)["config_hash"] == _manifest(o2)["config_hash"]


@pytest.mark.parametrize("config, needle", [
    ("[sim\nnu = 1", "malformed TOML"),
    ('[sim]\nnu = "fast"\n', "sim.nu: expected a number"),
    ("[sim]\ndt = 0.5\n", "dt"),
    ("[sim]\nhorizon = 0.1\n[output]\ncheckpoints = [0.5]\n", "outside"),
])
def test_simulate_config_errors(tmp_path, config, needle):
    res, out = _invoke(tmp_path, "simulate", config=config)
    assert res.exit_code == 1
    assert needle in res.output


def test_missing_config_file(tmp_path):
    res = CliRunner().invoke(main, ["--config", str(tmp_path / "nope.toml"), "simulate"])
    assert res.exit_code == 1


def test_flow_command(tmp_path):
    cfg = '[isotopy]\nfamily = "shear"\nshears = [{axis = 3, terms = [{k = [1, 0], sin = 0.1}]}]\n[flow]\ndt = 0.01\n'
    res, out = _invoke(tmp_path, "flow", "--grid", "3", config=cfg)
    assert res.exit_code == 0
    summary = json.loads((out / "flow.json").read_text())
    assert summary["max_det_error"] < 1e-10 and summary["velocity_vs_target_c1"] < 1e-10
    with open(out / "flowmap.csv") as fh:
        assert len(list(csv.reader(fh))) == 1 + 27


def test_probe_lipschitz(tmp_path):
    cfg = "[sim]\nhorizon = 0.2\ndt = 0.002\n[probe]\nkind = \"lipschitz\"\nsizes = [0.001, 0.0001]\n"
    res, out = _invoke(tmp_path, "probe", config=cfg)
    assert res.exit_code == 0
    with open(out / "probe.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    assert len(rows) == 2 and float(rows[0][3]) == pytest.approx(float(rows[1][3]), rel=1e-2)


def test_probe_unknown_kind(tmp_path):
    res, _ = _invoke(tmp_path, "probe", config='[probe]\nkind = "vibes"\n')
    assert res.exit_code == 1


def test_steer_builtin_is_deterministic(tmp_path):
    r1, o1 = _invoke(tmp_path, "steer", "--builtin", "lsdfavt", out="a")
    r2, o2 = _invoke(tmp_path, "steer", "--builtin", "lsdfavt", out="b")
    assert r1.exit_code == r2.exit_code == 0
    for name in ("trace.csv", "control.json"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
    summary = json.loads((o1 / "summary.json").read_text())
    assert not summary["failed"] and summary["final_error"] < summary["epsilon"]
    assert summary["control_residual"] <= 1e-12
    with open(o1 / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["level", "n"] and rows[-1][0] == "0"


def test_steer_budget_failure_exits_2(tmp_path):
    text = resources.files("ns_steer").joinpath("demos", "generator12.toml").read_text()
    text = text.replace("[staircase]", "[staircase]\nmax_pieces = 50")
    res, out = _invoke(tmp_path, "steer", config=text)
    assert res.exit_code == 2
    assert _manifest(out)["exit_status"] == 2
    assert json.loads((out / "summary.json").read_text())["failed"]


def test_steer_needs_a_problem(tmp_path):
    res, _ = _invoke(tmp_path, "steer")
    assert res.exit_code == 1
    res, _ = _invoke(tmp_path, "steer", "--builtin", "nonesuch", out="o2")
    assert res.exit_code == 1


def test_threads_option(tmp_path):
    res, out = _invoke(tmp_path, "--threads", "1", "lattice", "is-generator", "--modes", "[[1,0,0],[0,1,0],[0,0,1]]")
    assert res.exit_code == 0 and _manifest(out)["threads"] == 1
