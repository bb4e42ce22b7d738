"""Lagrangian flow maps of trigonometric velocity fields, their C^1 distance, and isotopy targets."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fourier import ModeTable, TrigField, field_from_json, leray_project

TWO_PI = 2.0 * math.pi
JACOBIAN_FLOOR = 0.1


# velocity fields as functions of time

class FieldPath:
    """Velocity u(t, x) = sum over ``modes`` of cos/sin coefficient arrays returned by ``coeffs(t)``."""

    def __init__(self, modes: np.ndarray, coeffs: Callable[[float], np.ndarray]) -> None:
        self.modes = np.asarray(modes, np.int64).reshape(-1, 3)
        self._k = self.modes.astype(float)
        self.coeffs = coeffs

    def eval(self, t: float, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocity (P, 3) and gradient (P, 3, 3) with entry [i, j] = d u_i / d x_j."""
        if len(self.modes) == 0:
            return np.zeros_like(pts), np.zeros(pts.shape[:-1] + (3, 3))
        arr = self.coeffs(t)
        phase = pts @ self._k.T
        cp, sp = np.cos(phase), np.sin(phase)
        vel = cp @ arr[:, 0] + sp @ arr[:, 1]
        # d/dx_j [c cos + s sin] = (-c sin + s cos) k_j
        g = np.einsum("pk,ki,kj->pij", -sp, arr[:, 0], self._k) + np.einsum("pk,ki,kj->pij", cp, arr[:, 1], self._k)
        return vel, g

    def __neg__(self) -> "FieldPath":
        return FieldPath(self.modes, lambda t: -self.coeffs(t))

    def __add__(self, other: "FieldPath") -> "FieldPath":
        modes = np.vstack([self.modes, other.modes])
        return FieldPath(modes, lambda t: np.concatenate([self.coeffs(t), other.coeffs(t)]))

    def reversed(self, horizon: float) -> "FieldPath":
        """t -> -u(horizon - t)."""
        return FieldPath(self.modes, lambda t: -self.coeffs(horizon - t))

    def shifted(self, s: float) -> "FieldPath":
        return FieldPath(self.modes, lambda t: self.coeffs(t + s))


def steady(u: TrigField) -> FieldPath:
    arr = np.stack([u.cos, u.sin], axis=1)
    return FieldPath(u.modes, lambda t: arr)


def table_path(table: ModeTable, func: Callable[[float], np.ndarray],
               support: np.ndarray | None = None) -> FieldPath:
    """Field path from state arrays on ``table``; ``support`` (bool mask over modes) skips idle modes."""
    if support is None:
        return FieldPath(table.modes, func)
    support = np.asarray(support, bool)
    return FieldPath(table.modes[support], lambda t: func(t)[support])


def trajectory_path(traj) -> FieldPath:
    """Linear-in-time interpolation of a recorded trajectory."""
    return FieldPath(traj.table.modes, traj.state_at)


def signal_path(sig) -> FieldPath:
    return FieldPath(sig.table.modes, sig.value)


# flow maps

@dataclass(frozen=True)
class FlowMap:
    """Flow map sampled on a regular seed grid: unwrapped positions and Jacobians."""

    grid_res: int
    time: float
    seeds: np.ndarray  # (P, 3)
    positions: np.ndarray  # (P, 3), unwrapped
    jacobians: np.ndarray  # (P, 3, 3)

    @property
    def determinants(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    def csv_rows(self) -> list[list[float]]:
        det = self.determinants
        rows = []
        for i in range(len(self.seeds)):
            rows.append([i, *self.positions[i].tolist(), *self.jacobians[i].reshape(-1).tolist(), float(det[i])])
        return rows


CSV_HEADER = ["seed", "x1", "x2", "x3"] + [f"d{i}{j}" for i in range(1, 4) for j in range(1, 4)] + ["det"]


def seed_grid(grid_res: int) -> np.ndarray:
    if grid_res < 2:
        raise ValueError("grid_res must be at least 2")
    g = np.arange(grid_res) * (TWO_PI / grid_res)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1)
    return X.reshape(-1, 3)


def identity_map(grid_res: int, time: float = 0.0) -> FlowMap:
    s = seed_grid(grid_res)
    return FlowMap(grid_res, time, s, s.copy(), np.broadcast_to(np.eye(3), (len(s), 3, 3)).copy())


def integrate_flow(u: FieldPath, grid_res: int, horizon: float = 1.0, dt: float = 1e-2,
                   sample_times: Sequence[float] | None = None, t0: float = 0.0,
                   seeds: np.ndarray | None = None) -> list[FlowMap]:
    """RK4 for x' = u(t, x) together with D' = grad u(t, x) D, from t0 to t0 + horizon.

    Returns flow maps at ``sample_times`` (absolute times; default: the end time).
    Sample times are hit exactly by shortening the step before each of them.
    """
    if grid_res < 2:
        raise ValueError("grid_res must be at least 2")
    s0 = seed_grid(grid_res) if seeds is None else np.asarray(seeds, float)
    t_end = t0 + horizon
    if sample_times is None:
        sample_times = [t_end]
    targets = sorted(float(t) for t in sample_times)
    nsteps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    grid = np.linspace(t0, t_end, nsteps + 1)
    grid = np.unique(np.concatenate([grid, [t for t in targets if t0 < t < t_end]]))
    x = s0.copy()
    D = np.broadcast_to(np.eye(3), (len(s0), 3, 3)).copy()
    out = []
    ti = 0
    while ti < len(targets) and targets[ti] <= t0 + 1e-14:
        out.append(FlowMap(grid_res, targets[ti], s0, x.copy(), D.copy()))
        ti += 1

    def rhs(t, x, D):
        v, g = u.eval(t, x)
        return v, g @ D

    for a, b in zip(grid[:-1], grid[1:]):
        h = b - a
        k1x, k1d = rhs(a, x, D)
        k2x, k2d = rhs(a + h / 2, x + h / 2 * k1x, D + h / 2 * k1d)
        k3x, k3d = rhs(a + h / 2, x + h / 2 * k2x, D + h / 2 * k2d)
        k4x, k4d = rhs(b, x + h * k3x, D + h * k3d)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        D = D + h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d)
        while ti < len(targets) and abs(targets[ti] - b) < 1e-12 * max(1.0, abs(b)):
            out.append(FlowMap(grid_res, targets[ti], s0, x.copy(), D.copy()))
            ti += 1
    return out


class FlowTracker:
    """Advances seed positions and Jacobians alongside a solver (Heun per solver step).

    Pass an instance as the ``observer`` of :func:`ns_steer.nse.solve`; flow maps
    are stored when a step ends on one of ``sample_times``.
    """

    def __init__(self, table: ModeTable, grid_res: int, sample_times: Sequence[float]) -> None:
        self.table = table
        self.grid_res = grid_res
        self.seeds = seed_grid(grid_res)
        self.x = self.seeds.copy()
        self.D = np.broadcast_to(np.eye(3), (len(self.seeds), 3, 3)).copy()
        self.pending = sorted(float(t) for t in sample_times)
        self.maps: list[FlowMap] = []
        self._emit(0.0)

    def _emit(self, t: float) -> None:
        while self.pending and abs(self.pending[0] - t) <= 1e-12 * max(1.0, abs(t)):
            self.maps.append(FlowMap(self.grid_res, self.pending.pop(0), self.seeds, self.x.copy(), self.D.copy()))

    def __call__(self, t0: float, t1: float, u0: np.ndarray, u1: np.ndarray) -> None:
        h = t1 - t0
        tab = self.table
        v0 = tab.evaluate(u0, self.x)
        g0 = tab.gradient(u0, self.x)
        xp = self.x + h * v0
        d0 = g0 @ self.D
        Dp = self.D + h * d0
        v1 = tab.evaluate(u1, xp)
        g1 = tab.gradient(u1, xp)
        self.x = self.x + 0.5 * h * (v0 + v1)
        self.D = self.D + 0.5 * h * (d0 + g1 @ Dp)
        self._emit(t1)


def torus_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distance on R^3 / 2 pi Z^3, minimising over lifts."""
    d = np.mod(np.asarray(x) - np.asarray(y) + math.pi, TWO_PI) - math.pi
    return np.linalg.norm(d, axis=-1)


def c1_distance(phi: FlowMap, psi: FlowMap) -> float:
    """max over seeds of torus distance of images plus Frobenius distance of Jacobians."""
    if phi.grid_res != psi.grid_res or phi.seeds.shape != psi.seeds.shape:
        raise ValueError(f"grid resolution mismatch: {phi.grid_res} vs {psi.grid_res}")
    if np.max(np.abs(phi.seeds - psi.seeds)) > 1e-12:
        raise ValueError("flow maps are sampled on different seeds")
    pos = torus_distance(phi.positions, psi.positions)
    jac = np.linalg.norm(phi.jacobians - psi.jacobians, axis=(1, 2))
    return float(np.max(pos + jac))


def compose(outer: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], inner: FlowMap) -> FlowMap:
    """outer o inner, where ``outer(points)`` returns images and Jacobians there."""
    y, J = outer(inner.positions)
    return FlowMap(inner.grid_res, inner.time, inner.seeds, y, J @ inner.jacobians)


# relaxation norm

def relaxation_norm(times: Sequence[float], samples: np.ndarray, table: ModeTable, k: float = 0.0) -> float:
    """sup_t |int_0^t u|_{H^k} with the trapezoidal rule on the sample times."""
    times = np.asarray(times, float)
    samples = np.asarray(samples, float)
    if len(times) < 2:
        return 0.0
    dt = np.diff(times)[:, None, None, None]
    incr = 0.5 * dt * (samples[1:] + samples[:-1])
    running = np.concatenate([np.zeros_like(samples[:1]), np.cumsum(incr, axis=0)])
    return float(table.norms(running, k).max())


# stability probe

@dataclass
class StabilityResult:
    ns: list[int]
    flow_distances: list[float]
    relaxation: list[float]
    linf_difference: list[float]
    exponent: float
    target_exponent: float


def stability_probe(table: ModeTable, base: Callable[[float], np.ndarray], v: np.ndarray,
                    lam: float = 0.5, ns: Sequence[int] = (4, 8, 16, 32), horizon: float = 1.0,
                    grid_res: int = 8, dt: float = 5e-4, k: float = 0.0) -> StabilityResult:
    """Flow distance between u and u + v sin(2 pi n t / T) against the relaxation norm of the difference.

    The flow distance is the largest C^1 distance over the uniform sample times;
    the exponent is the least-squares slope of log distance against log relaxation norm.
    """
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    samples = np.linspace(0, horizon, 21)
    # modes touched by the base (sampled in time) or by the perturbation
    probe = np.array([base(t) for t in np.linspace(0, horizon, 11)] + [v])
    support = np.abs(probe).reshape(len(probe), table.size, -1).max(axis=(0, 2)) > 0
    ref = integrate_flow(table_path(table, base, support), grid_res, horizon, dt, samples)
    dists, rel, linf = [], [], []
    fine = np.linspace(0, horizon, 4001)
    for n in ns:
        w = TWO_PI * n / horizon

        def pert(t, w=w):
            return base(t) + math.sin(w * t) * v

        maps = integrate_flow(table_path(table, pert, support), grid_res, horizon, dt, samples)
        dists.append(max(c1_distance(a, b) for a, b in zip(ref, maps)))
        diffs = np.sin(w * fine)[:, None, None, None] * v[None]
        rel.append(relaxation_norm(fine, diffs, table, k))
        linf.append(float(table.norm(v, k)))
    slope = float(np.polyfit(np.log(rel), np.log(dists), 1)[0])
    return StabilityResult(list(ns), dists, rel, linf, slope, lam / 2)


# isotopies

def _shear_axis_modes(axis: int, terms) -> TrigField:
    """Trigonometric field e_axis f(x_{axis+1}, x_{axis+2}) for f given by (k, cos, sin) terms."""
    raw = {}
    for k2, c, s in terms:
        ell = [0, 0, 0]
        ell[(axis + 1) % 3] = int(k2[0])
        ell[(axis + 2) % 3] = int(k2[1])
        e = np.zeros(3)
        e[axis] = 1.0
        key = tuple(ell)
        pc, ps = raw.get(key, (np.zeros(3), np.zeros(3)))
        raw[key] = (pc + c * e, ps + s * e)
    return leray_project(raw)


@dataclass
class Shear:
    """x_axis += f(x_{axis+1}, x_{axis+2}) (axis is 0-based); f = sum c cos(k.y) + s sin(k.y)."""

    axis: int
    terms: tuple  # tuples (k (2 ints), c, s)

    def field(self) -> TrigField:
        return _shear_axis_modes(self.axis, self.terms)

    def apply(self, x: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Images and Jacobians of the scaled shear at points x (P, 3)."""
        i = self.axis
        j, l = (i + 1) % 3, (i + 2) % 3
        f = np.zeros(len(x))
        grad = np.zeros((len(x), 3))
        for k2, c, s in self.terms:
            ph = k2[0] * x[:, j] + k2[1] * x[:, l]
            f += c * np.cos(ph) + s * np.sin(ph)
            d = -c * np.sin(ph) + s * np.cos(ph)
            grad[:, j] += d * k2[0]
            grad[:, l] += d * k2[1]
        y = x.copy()
        y[:, i] += scale * f
        J = np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
        J[:, i, :] += scale * grad
        return y, J


def _smooth_ramp(tau: float) -> tuple[float, float]:
    """s(tau) = tau - sin(2 pi tau)/(2 pi) and its derivative, on [0, 1]."""
    tau = min(max(tau, 0.0), 1.0)
    return tau - math.sin(TWO_PI * tau) / TWO_PI, 1.0 - math.cos(TWO_PI * tau)


@dataclass
class Isotopy:
    """Path I(t, .) from the identity to a target, with its generating velocity û.

    ``velocity`` evaluates û as a FieldPath on the trigonometric modes it needs;
    ``maps(t, x)`` returns I(t, x) and its Jacobian.
    """

    family: str
    horizon: float
    velocity: FieldPath
    maps: Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]
    velocity_fields: list  # (start, end, TrigField, schedule) pieces for coefficient access
    projection_residual: float = 0.0

    def target(self, grid_res: int) -> FlowMap:
        s = seed_grid(grid_res)
        y, J = self.maps(self.horizon, s)
        return FlowMap(grid_res, self.horizon, s, y, J)

    def slice(self, t: float, grid_res: int) -> FlowMap:
        s = seed_grid(grid_res)
        y, J = self.maps(t, s)
        return FlowMap(grid_res, t, s, y, J)

    def velocity_state(self, table: ModeTable, t: float) -> np.ndarray:
        """û(t) as a state array on ``table``."""
        out = table.zeros()
        for start, end, fld, rate in self.velocity_fields:
            if start <= t <= end:
                r = rate(t)
                if r:
                    out = out + r * table.from_field(fld)
        return out

    def velocity_derivative(self, table: ModeTable, t: float, eps: float = 1e-6) -> np.ndarray:
        a = self.velocity_state(table, min(t + eps, self.horizon))
        b = self.velocity_state(table, max(t - eps, 0.0))
        return (a - b) / (min(t + eps, self.horizon) - max(t - eps, 0.0))


def _check_floor(maps, horizon: float, floor: float, grid_res: int = 6) -> None:
    s = seed_grid(grid_res)
    for t in np.linspace(0, horizon, 11):
        _, J = maps(t, s)
        dmin = float(np.linalg.det(J).min())
        if dmin < floor:
            raise ValueError(f"isotopy leaves the Jacobian floor: det {dmin:.3g} < {floor} at t = {t:.3g}")


def build_isotopy(spec: dict, floor: float = JACOBIAN_FLOOR) -> Isotopy:
    """Isotopy for a target specification.

    Families: ``identity``; ``flow`` (time-horizon map of a fixed field,
    key ``field`` in snapshot format, optional ``scale``); ``shear`` (key
    ``shears``: list of {axis 1..3, terms: [{k: [a, b], cos, sin}]}, composed
    as S_1 o S_2 o ... with the last applied first); ``map`` (pointwise callable
    ``path(t, x) -> (x', J)`` on [0, horizon], checked against the floor only).
    """
    if not isinstance(spec, dict) or "family" not in spec:
        raise ValueError("isotopy.family: missing")
    family = spec["family"]
    T = float(spec.get("horizon", 1.0))
    if not T > 0:
        raise ValueError("isotopy.horizon: must be positive")
    if family == "identity":
        maps = lambda t, x: (x.copy(), np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy())
        return Isotopy(family, T, FieldPath(np.zeros((0, 3)), lambda t: np.zeros((0, 2, 3))), maps, [])
    if family == "flow":
        if "field" not in spec:
            raise ValueError("isotopy.field: missing")
        w = field_from_json(spec["field"], "isotopy.field") * float(spec.get("scale", 1.0))
        path = steady(w)

        def maps(t, x):
            if t <= 0:
                return x.copy(), np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
            fm = integrate_flow(path, 2, t, dt=min(1e-2, t / 50), seeds=x)[0]
            return fm.positions, fm.jacobians

        iso = Isotopy(family, T, path, maps, [(0.0, T, w, lambda t: 1.0)])
        _check_floor(maps, T, floor, grid_res=3)
        return iso
    if family == "shear":
        raw = spec.get("shears")
        if not isinstance(raw, list) or not raw:
            raise ValueError("isotopy.shears: expected a non-empty array")
        shears = []
        for i, sh in enumerate(raw):
            where = f"isotopy.shears[{i}]"
            if not isinstance(sh, dict) or "axis" not in sh or "terms" not in sh:
                raise ValueError(f"{where}: expected {{axis, terms}}")
            axis = sh["axis"]
            if axis not in (1, 2, 3):
                raise ValueError(f"{where}.axis: must be 1, 2 or 3")
            terms = []
            for j, term in enumerate(sh["terms"]):
                if "k" not in term or len(term["k"]) != 2:
                    raise ValueError(f"{where}.terms[{j}].k: expected two integers")
                terms.append((tuple(int(v) for v in term["k"]), float(term.get("cos", 0.0)), float(term.get("sin", 0.0))))
            shears.append(Shear(axis - 1, tuple(terms)))
        return shear_isotopy(shears, T, floor)
    if family == "map":
        path = spec.get("path")
        if not callable(path):
            raise ValueError("isotopy.path: expected a callable")
        _check_floor(path, T, floor)
        return Isotopy(family, T, FieldPath(np.zeros((0, 3)), lambda t: np.zeros((0, 2, 3))), path, [])
    raise ValueError(f"isotopy.family: unknown family {family!r}")


def shear_isotopy(shears: Sequence[Shear], horizon: float = 1.0, floor: float = JACOBIAN_FLOOR) -> Isotopy:
    """S_1 o ... o S_r realised by switching the shears on one after another (S_r first).

    A single shear uses the linear schedule, so its velocity is steady; with
    several shears each gets a smooth schedule on its own time slot.
    """
    r = len(shears)
    order = list(reversed(shears))  # applied first to last
    fields = [sh.field() for sh in order]
    T = horizon
    if r == 1:
        scheds = [lambda t: (t / T, 1.0 / T)]
    else:
        slot = T / r

        def make(i):
            def sch(t):
                s, ds = _smooth_ramp((t - i * slot) / slot)
                return s, ds / slot
            return sch
        scheds = [make(i) for i in range(r)]

    def maps(t, x):
        y = x.copy()
        J = np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
        for sh, sch in zip(order, scheds):
            s, _ = sch(t)
            if s:
                y, Js = sh.apply(y, s)
                J = Js @ J
        return y, J

    modes_all = np.vstack([f.modes for f in fields]) if fields else np.zeros((0, 3), np.int64)

    def coeffs(t):
        parts = []
        for f, sch in zip(fields, scheds):
            _, ds = sch(t)
            parts.append(ds * np.stack([f.cos, f.sin], axis=1))
        return np.concatenate(parts)

    pieces = []
    for i, (f, sch) in enumerate(zip(fields, scheds)):
        lo, hi = (0.0, T) if r == 1 else (i * T / r, (i + 1) * T / r)
        pieces.append((lo, hi, f, (lambda t, sch=sch: sch(t)[1])))
    iso = Isotopy("shear", T, FieldPath(modes_all, coeffs), maps, pieces)
    _check_floor(maps, T, floor)
    return iso
