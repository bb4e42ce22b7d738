"""Command-line runner: each subcommand writes CSV/JSON artifacts plus a manifest into ``--out``.

Exit status: 0 on success, 2 when a steering run misses its error budget
(partial results are still written), 1 on any error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from importlib import metadata
import time
from pathlib import Path

import click

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2
DEMOS = ("generator12", "lavt", "lsdfavt")

log = logging.getLogger("ns_steer")


class BudgetFailure(Exception):
    """Raised after partial artifacts are written for a run that missed its budget."""


class Context:
    def __init__(self, config: Path | None, out: Path, seed: int, threads: int | None) -> None:
        self.config_path = config
        self.out = out
        self.seed = seed
        self.threads = threads
        self.files: list[Path] = []
        self.config: dict = {}
        self.start = time.perf_counter()
        if config is not None:
            self.config = load_toml(config.read_text(), str(config))

    def section(self, name: str) -> dict:
        sec = self.config.get(name, {})
        if not isinstance(sec, dict):
            raise ValueError(f"{name}: expected a table")
        return sec

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        self.files.append(p)
        return p

    def write_json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return p

    def write_csv(self, name: str, header, rows) -> Path:
        import csv
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return p


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def load_toml(text: str, where: str = "<config>") -> dict:
    import tomli
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ValueError(f"{where}: malformed TOML ({exc})") from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for mod in ("numpy", "scipy", "click", "tomli", "threadpoolctl", "cvxpy"):
        try:
            out[mod] = metadata.version(mod)
        except metadata.PackageNotFoundError:  # pragma: no cover - optional metadata only
            out[mod] = "unknown"
    from . import __version__
    out["ns_steer"] = __version__
    return out


def write_manifest(ctx: Context, command: str, status: int, extra_config: dict | None = None) -> None:
    cfg = dict(ctx.config)
    if extra_config:
        cfg["_command"] = extra_config
    canon = json.dumps(cfg, sort_keys=True, default=str)
    files = []
    for p in ctx.files:
        if p.exists():
            files.append({"path": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size})
    manifest = {
        "command": command,
        "config_path": str(ctx.config_path) if ctx.config_path else None,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": ctx.seed,
        "threads": ctx.threads,
        "exit_status": status,
        "wall_time_s": round(time.perf_counter() - ctx.start, 3),
        "versions": _versions(),
        "files": files,
    }
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _run(ctx: click.Context, command: str, body, extra: dict | None = None) -> None:
    """Run a subcommand body, mapping outcomes onto exit codes and always writing the manifest."""
    c: Context = ctx.obj
    status = EXIT_OK
    try:
        body(c)
    except BudgetFailure as exc:
        click.echo(f"budget failure: {exc}", err=True)
        status = EXIT_BUDGET
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        status = EXIT_ERROR
    try:
        write_manifest(c, command, status, extra)
    except OSError as exc:
        click.echo(f"error: could not write manifest ({exc})", err=True)
        status = EXIT_ERROR
    ctx.exit(status)


def _parse_json_arg(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{what}: invalid JSON ({exc.msg})") from None


def _demo_text(name: str) -> str:
    from importlib import resources
    if name not in DEMOS:
        raise ValueError(f"--builtin: unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    return resources.files("ns_steer").joinpath("demos", f"{name}.toml").read_text()


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="TOML configuration file.")
@click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), default=Path("out"),
              show_default=True, help="Directory for artifacts and the manifest.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for every random choice.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Thread count for the linear algebra backend.")
@click.pass_context
def main(ctx: click.Context, config, out, seed, threads) -> None:
    """Desk-scale steering of Galerkin Navier-Stokes flows with low-dimensional forcing."""
    level = os.environ.get("NS_STEER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
        from threadpoolctl import threadpool_limits
        threadpool_limits(threads)
    if config is not None and not config.exists():
        click.echo(f"error: --config: no such file {config}", err=True)
        ctx.exit(EXIT_ERROR)
    try:
        ctx.obj = Context(config, out, seed, threads)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        ctx.exit(EXIT_ERROR)


# lattice

@main.group()
def lattice() -> None:
    """Integer-lattice queries on mode sets (JSON arrays of integer triples)."""


def _modes_arg(c: Context, modes: str | None):
    from .lattice import LatticeSet
    if modes is not None:
        return LatticeSet.from_json(_parse_json_arg(modes, "--modes"))
    sec = c.section("lattice")
    if "modes" not in sec:
        raise ValueError("lattice.modes: missing (pass --modes or set it in the config)")
    return LatticeSet.from_json(sec["modes"])


@lattice.command("is-generator")
@click.option("--modes", default=None, help="JSON array of integer triples.")
@click.pass_context
def lattice_is_generator(ctx, modes):
    def body(c):
        from .lattice import determinant_gcd, is_generator
        K = _modes_arg(c, modes)
        res = {"modes": K.to_json(), "is_generator": is_generator(K), "determinant_gcd": determinant_gcd(K)}
        c.write_json("lattice.json", res)
        click.echo(json.dumps(res))
    _run(ctx, "lattice is-generator", body, {"modes": modes})


@lattice.command("ladder")
@click.option("--modes", default=None, help="JSON array of integer triples.")
@click.option("--depth", type=click.IntRange(min=0), required=True)
@click.option("--radius", type=click.IntRange(min=1), default=None, help="Keep only modes with |l|_inf <= radius.")
@click.pass_context
def lattice_ladder(ctx, modes, depth, radius):
    def body(c):
        from .lattice import grow_ladder
        K = _modes_arg(c, modes)
        levels = [grow_ladder(K, j, radius).to_json() for j in range(depth + 1)]
        res = {"modes": K.to_json(), "depth": depth, "radius": radius, "levels": levels,
               "sizes": [len(x) for x in levels]}
        c.write_json("lattice.json", res)
        click.echo(json.dumps({"sizes": res["sizes"]}))
    _run(ctx, "lattice ladder", body, {"modes": modes, "depth": depth, "radius": radius})


@lattice.command("member")
@click.option("--modes", default=None, help="JSON array of integer triples.")
@click.option("--target", required=True, help="JSON integer triple.")
@click.pass_context
def lattice_member(ctx, modes, target):
    def body(c):
        from .lattice import integer_span_membership
        from .saturation import parity_witness
        K = _modes_arg(c, modes)
        t = _parse_json_arg(target, "--target")
        if not (isinstance(t, list) and len(t) == 3 and all(isinstance(x, int) for x in t)):
            raise ValueError("--target: expected an integer triple")
        member = integer_span_membership(K, t)
        res = {"modes": K.to_json(), "target": t, "member": member}
        if not member:
            w = parity_witness(K, t)
            res["witness"] = {"functional": list(w.functional), "modulus": w.modulus}
        c.write_json("lattice.json", res)
        click.echo(json.dumps(res))
    _run(ctx, "lattice member", body, {"modes": modes, "target": target})


# saturation

def _space_from_config(spec):
    from .control import _space_from_spec
    return _space_from_spec(spec, "saturate.space")


@main.command()
@click.option("--builtin", default=None, help="Built-in space: generator12, lavt or lsdfavt.")
@click.option("--depth", type=click.IntRange(min=1), default=None)
@click.option("--radius", type=click.IntRange(min=1), default=None)
@click.pass_context
def saturate(ctx, builtin, depth, radius):
    """Ladder of extension spaces: reached planes per depth (CSV) and a summary (JSON)."""
    def body(c):
        from .lattice import canonical_box
        from .saturation import builtin_certificate, ladder_levels
        sec = c.section("saturate")
        spec = builtin or sec.get("space")
        if spec is None:
            raise ValueError("saturate.space: missing (pass --builtin or set it in the config)")
        d = depth or int(sec.get("depth", 4))
        r = radius or int(sec.get("radius", 2))
        E = _space_from_config(spec)
        lad = ladder_levels(E, d, r)
        c.write_csv("ladder.csv", ("depth", "mode", "plane", "reached"), lad.csv_rows())
        summary = {"space": spec, "radius": r, "dims": [s.dim for s in lad.levels],
                   "stable_at": lad.stable_at, "first_full_depth": lad.first_full_depth()}
        missing = [m for m in canonical_box(r) if not (lad.final.reaches(m, "cos") and lad.final.reaches(m, "sin"))]
        summary["unreached_modes"] = [list(m) for m in missing]
        if isinstance(spec, dict) and "modes" in spec and missing:
            from .saturation import parity_witness
            wits = {}
            for m in missing:
                w = parity_witness(spec["modes"], m)
                if w is not None:
                    wits[" ".join(map(str, m))] = {"functional": list(w.functional), "modulus": w.modulus}
            summary["parity_witnesses"] = wits
        c.write_json("saturation.json", summary)
        if isinstance(spec, str):
            c.write_json("certificate.json", builtin_certificate(spec).to_json())
        click.echo(json.dumps({"dims": summary["dims"], "first_full_depth": summary["first_full_depth"]}))
    _run(ctx, "saturate", body, {"builtin": builtin, "depth": depth, "radius": radius})


@main.command("verify-certificate")
@click.option("--builtin", default=None, help="Replay the certificate of a built-in space.")
@click.option("--file", "path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Certificate JSON file.")
@click.pass_context
def verify_certificate_cmd(ctx, builtin, path):
    """Replay a saturation certificate; exit 0 only if every step checks."""
    def body(c):
        from .saturation import builtin_certificate, verify_certificate
        if (builtin is None) == (path is None):
            raise ValueError("pass exactly one of --builtin and --file")
        if builtin is not None:
            cert = builtin_certificate(builtin).to_json()
        else:
            cert = _parse_json_arg(path.read_text(), str(path))
        rep = verify_certificate(cert)
        c.write_json("verification.json", rep.to_json())
        nbad = sum(1 for s in rep.steps if not s.ok)
        click.echo(f"{len(rep.steps)} steps, {nbad} failing, targets {'ok' if rep.ok else 'NOT ok'}")
        if not rep.ok:
            raise RuntimeError("certificate did not verify")
    _run(ctx, "verify-certificate", body, {"builtin": builtin, "file": str(path) if path else None})


# simulation

@main.command()
@click.pass_context
def simulate(ctx):
    """Solve the Galerkin system; config tables [sim], [initial], [force], [output]."""
    def body(c):
        import numpy as np
        from .control import _field_from_spec
        from .fourier import field_to_json
        from .nse import SimConfig, constant_signal, solve
        cfg = SimConfig.from_mapping(c.section("sim"), "sim")
        table = cfg.table()
        init = dict(c.section("initial"))
        init.setdefault("seed", c.seed)
        u0 = _field_from_spec(init, table, cfg.sobolev_k, "initial")
        force = c.section("force")
        h = None
        if force:
            fh = _field_from_spec(dict(force, seed=force.get("seed", c.seed + 1)), table, cfg.sobolev_k, "force")
            h = constant_signal(table, cfg.horizon, table.from_field(fh))
        out = c.section("output")
        checkpoints = out.get("checkpoints", [0.0, cfg.horizon])
        if not isinstance(checkpoints, list) or not all(isinstance(t, (int, float)) for t in checkpoints):
            raise ValueError("output.checkpoints: expected a list of times")
        for t in checkpoints:
            if not 0 <= t <= cfg.horizon:
                raise ValueError(f"output.checkpoints: time {t} outside [0, {cfg.horizon}]")
        traj = solve(u0, h, None, None, cfg)
        c.write_csv("trajectory.csv", ("time", "energy", "hk_norm"), traj.csv_rows())
        snaps = []
        for t in checkpoints:
            i = int(np.argmin(np.abs(traj.times - t)))
            snaps.append({"time": float(traj.times[i]), "field": field_to_json(traj.field_at(i))})
        c.write_json("snapshots.json", snaps)
        click.echo(f"final energy {traj.energy()[-1]:.6g}, H^{cfg.sobolev_k:g} norm {traj.hk_norms()[-1]:.6g}")
    _run(ctx, "simulate", body)


@main.command()
@click.option("--grid", "grid_res", type=click.IntRange(min=2), default=None, help="Seeds per axis.")
@click.pass_context
def flow(ctx, grid_res):
    """Flow map of an isotopy target ([isotopy]) as CSV, with the Liouville check."""
    def body(c):
        import numpy as np
        from .flow import CSV_HEADER, build_isotopy, integrate_flow
        spec = c.section("isotopy")
        if not spec:
            raise ValueError("isotopy: missing")
        g = grid_res or int(c.section("flow").get("grid", 8))
        iso = build_isotopy(dict(spec))
        target = iso.target(g)
        c.write_csv("target.csv", CSV_HEADER, target.csv_rows())
        dt = float(c.section("flow").get("dt", 1e-3))
        fm = integrate_flow(iso.velocity, g, iso.horizon, dt)[-1]
        c.write_csv("flowmap.csv", CSV_HEADER, fm.csv_rows())
        from .flow import c1_distance
        summary = {"family": iso.family, "grid": g, "max_det_error": float(np.abs(fm.determinants - 1).max()),
                   "velocity_vs_target_c1": c1_distance(fm, target)}
        c.write_json("flow.json", summary)
        click.echo(json.dumps(summary))
    _run(ctx, "flow", body, {"grid": grid_res})


# steering

@main.command()
@click.option("--builtin", default=None, help="Run a shipped demo: generator12, lavt or lsdfavt.")
@click.pass_context
def steer(ctx, builtin):
    """Run the staircase; writes trace.csv, summary.json and control.json (exit 2 on budget failure)."""
    def body(c):
        from .control import SteeringProblem, run_staircase
        from .nse import signal_to_json
        if builtin is not None:
            data = load_toml(_demo_text(builtin), f"demo {builtin}")
            c.config = data
        elif c.config:
            data = c.config
        else:
            raise ValueError("steer: pass --builtin or --config")
        data = _inject_seed(data, c.seed)
        problem = SteeringProblem.from_mapping(data)
        res = run_staircase(problem, progress=lambda r: log.info("level %d done: n=%d total error %.4g",
                                                                  r.level, r.n, r.total))
        c.write_csv("trace.csv", res.trace.CSV_HEADER, res.trace.csv_rows())
        summary = res.trace.to_json()
        summary.update({"name": problem.name, "relaxation_gap": res.reference.relaxation_gap,
                        "target_gap": res.reference.target_gap})
        c.write_json("summary.json", summary)
        c.write_json("control.json", signal_to_json(res.control))
        click.echo(f"depth {res.trace.depth}, final error {res.trace.final_error:.4g} "
                   f"(epsilon {problem.epsilon:g})")
        if res.failed:
            raise BudgetFailure(res.trace.reason)
    _run(ctx, "steer", body, {"builtin": builtin})


def _inject_seed(data: dict, seed: int) -> dict:
    """Random field specs without their own seed take the global one."""
    out = dict(data)
    for key in ("u0", "u1", "force"):
        spec = out.get(key)
        if isinstance(spec, dict) and spec.get("kind") == "random" and "seed" not in spec:
            out[key] = dict(spec, seed=seed)
    return out


@main.command()
@click.pass_context
def probe(ctx):
    """Lipschitz probe of the solver or relaxation-stability probe of flows ([probe] kind)."""
    def body(c):
        import numpy as np
        sec = c.section("probe")
        kind = sec.get("kind", "lipschitz")
        from .control import _field_from_spec
        from .nse import SimConfig
        cfg = SimConfig.from_mapping(c.section("sim"), "sim")
        table = cfg.table()
        rng = np.random.default_rng(c.seed)
        if kind == "lipschitz":
            from .nse import lipschitz_probe
            init = dict(c.section("initial") or {"kind": "random", "hk_norm": 0.5})
            init.setdefault("seed", c.seed)
            u0 = _field_from_spec(init, table, cfg.sobolev_k, "initial")
            sizes = sec.get("sizes", [1e-2, 1e-3, 1e-4])
            slot = sec.get("slot", "u0")
            rows = lipschitz_probe(u0, None, None, None, cfg, sizes, slot=slot, rng=rng)
            c.write_csv("probe.csv", ("size", "input_distance", "trajectory_distance", "ratio"),
                        [(r.size, r.input_distance, r.trajectory_distance, r.ratio) for r in rows])
            click.echo(json.dumps({"ratios": [r.ratio for r in rows]}))
        elif kind == "stability":
            from .flow import stability_probe
            base = _field_from_spec(dict(sec.get("base", {"kind": "random", "hk_norm": 0.5, "radius": 1}),
                                         seed=c.seed), table, 0.0, "probe.base")
            v = _field_from_spec(dict(sec.get("perturbation", {"kind": "random", "hk_norm": 0.3, "radius": 1}),
                                      seed=c.seed + 1), table, 0.0, "probe.perturbation")
            B = table.from_field(base)
            V = table.from_field(v)
            res = stability_probe(table, lambda t: B, V, lam=float(sec.get("lam", 0.5)),
                                  ns=tuple(sec.get("ns", (4, 8, 16, 32))), grid_res=int(sec.get("grid", 8)),
                                  dt=float(sec.get("dt", 5e-4)))
            c.write_csv("probe.csv", ("n", "flow_distance", "relaxation_norm", "linf_difference"),
                        list(zip(res.ns, res.flow_distances, res.relaxation, res.linf_difference)))
            c.write_json("probe.json", {"exponent": res.exponent, "target_exponent": res.target_exponent})
            click.echo(json.dumps({"exponent": res.exponent}))
        else:
            raise ValueError(f"probe.kind: unknown kind {kind!r}")
    _run(ctx, "probe", body)


if __name__ == "__main__":  # pragma: no cover
    main()
