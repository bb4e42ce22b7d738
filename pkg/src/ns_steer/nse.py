"""Galerkin solver for the controlled Navier-Stokes system on the 3-torus.

The state lives on the canonical modes with |l|_inf <= radius as an array of
shape (K, 2, 3).  Time stepping is first order: the viscous term is integrated
exactly per mode (exponential integrator) and the quadratic term is frozen at
the left end of each step.  Forcing enters through exact exponentially
weighted integrals of the control signals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .fourier import ModeTable, TrigField, field_from_json, field_to_json

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class BlowUpError(RuntimeError):
    def __init__(self, time: float, norm: float, ceiling: float) -> None:
        super().__init__(f"H^k norm {norm:.3e} exceeded the ceiling {ceiling:.1e} at t = {time:.6g}")
        self.time = time
        self.norm = norm


# configuration

@dataclass(frozen=True)
class SimConfig:
    nu: float = 1.0
    galerkin_radius: int = 2
    dt: float = 1e-3
    horizon: float = 1.0
    sobolev_k: float = 3.0
    blowup_ceiling: float = 1e6

    def __post_init__(self) -> None:
        if not self.nu > 0:
            raise ValueError("nu: must be positive")
        if not (isinstance(self.galerkin_radius, int) and self.galerkin_radius >= 1):
            raise ValueError("galerkin_radius: must be a positive integer")
        if not self.horizon > 0:
            raise ValueError("horizon: must be positive")
        if not 0 < self.dt < self.horizon:
            raise ValueError("dt: must satisfy 0 < dt < horizon")
        bound = self.stability_bound
        if self.dt > bound:
            raise ValueError(f"dt: {self.dt} exceeds the step bound {bound:.6g}")
        if self.sobolev_k < 0:
            raise ValueError("sobolev_k: must be nonnegative")

    @property
    def stability_bound(self) -> float:
        return 0.5 / (self.nu * 3 * self.galerkin_radius ** 2)

    @classmethod
    def from_mapping(cls, data: dict, path: str = "") -> "SimConfig":
        if not isinstance(data, dict):
            raise ValueError(f"{path or '<root>'}: expected a table")
        known = {"nu": float, "galerkin_radius": int, "dt": float, "horizon": float,
                 "sobolev_k": float, "blowup_ceiling": float}
        kw = {}
        for key, val in data.items():
            where = f"{path}.{key}" if path else key
            if key not in known:
                raise ValueError(f"{where}: unknown key")
            typ = known[key]
            if typ is int and (not isinstance(val, int) or isinstance(val, bool)):
                raise ValueError(f"{where}: expected an integer")
            if typ is float and (not isinstance(val, (int, float)) or isinstance(val, bool)):
                raise ValueError(f"{where}: expected a number")
            kw[key] = typ(val)
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ValueError(f"{path + '.' if path else ''}{exc}") from None

    @classmethod
    def from_toml(cls, text: str) -> "SimConfig":
        import tomli
        data = tomli.loads(text)
        return cls.from_mapping(data.get("sim", data), "sim" if "sim" in data else "")

    def table(self) -> ModeTable:
        return _box_table(self.galerkin_radius)


_TABLES: dict[int, ModeTable] = {}


def _box_table(radius: int) -> ModeTable:
    if radius not in _TABLES:
        _TABLES[radius] = ModeTable.box(radius)
    return _TABLES[radius]


# exponential weights

def _phi1(z: np.ndarray) -> np.ndarray:
    """(1 - exp(-z)) / z, equal to 1 at 0."""
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2, -np.expm1(-zs) / zs)


def _psi(z: np.ndarray) -> np.ndarray:
    """(z - 1 + exp(-z)) / z^2, equal to 1/2 at 0."""
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    series = 0.5 - z / 6 + z * z / 24 - z ** 3 / 120 + z ** 4 / 720
    return np.where(small, series, (zs + np.expm1(-zs)) / (zs * zs))


# control signals

class ControlSignal:
    """Time-dependent field on a mode table over [0, horizon]."""

    kind = "smooth-sampled"
    horizon: float
    table: ModeTable

    def value(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        return np.zeros(0)

    def exp_integral(self, t0: float, t1: float, lam: np.ndarray) -> np.ndarray:
        """int_{t0}^{t1} exp(-lam (t1 - s)) f(s) ds, per mode (lam has shape (K,))."""
        raise NotImplementedError

    def derivative(self) -> "ControlSignal":
        raise NotImplementedError

    def __add__(self, other: "ControlSignal") -> "ControlSignal":
        return SumSignal([self, other])

    def __mul__(self, alpha: float) -> "ControlSignal":
        return ScaledSignal(self, float(alpha))

    __rmul__ = __mul__

    def samples(self, times: Sequence[float]) -> np.ndarray:
        return np.array([self.value(t) for t in times])

    def check_space(self, space, tol: float = MEMBERSHIP_TOL) -> float:
        """Largest relative residual of the signal's values outside ``space``; raises above tol."""
        worst = 0.0
        for v in self._pool_values():
            worst = max(worst, space_residual(space, self.table, v))
        if worst > tol:
            raise ValueError(f"control values leave the declared space (residual {worst:.3e})")
        return worst

    def _pool_values(self) -> Iterable[np.ndarray]:
        ts = np.linspace(0, self.horizon, 17)
        return [self.value(t) for t in ts]


def space_residual(space, table: ModeTable, arr: np.ndarray) -> float:
    """Relative distance of a state array from a ModeSpace."""
    coords = table.to_frame(arr)  # (K, 4)
    pos = {m: i for i, m in enumerate(map(tuple, table.modes.tolist()))}
    v = np.zeros(4 * len(space.modes))
    covered = np.zeros(table.size, bool)
    for j, m in enumerate(space.modes):
        i = pos.get(m)
        if i is not None:
            v[4 * j:4 * j + 4] = coords[i]
            covered[i] = True
    total = float(np.sum(coords * coords))
    rest = coords[~covered]
    outside = float(np.sum(rest * rest))
    r = v - space.basis.T @ (space.basis @ v) if space.dim else v
    return math.sqrt(float(r @ r) + outside) / max(1.0, math.sqrt(total))


class PiecewiseAffine(ControlSignal):
    """Piecewise affine signal built from a pool of state arrays.

    On piece i, ``[breaks[i], breaks[i+1])``, the value at local time tau is
    ``sum_r (c0[i, r] + c1[i, r] * tau) * pool[idx[i, r]]``.  Breakpoints are exact.
    """

    def __init__(self, table: ModeTable, breaks, pool, idx, c0, c1, *, kind: str | None = None,
                 space=None) -> None:
        self.table = table
        self.breaks = np.asarray(breaks, float)
        self.pool = np.asarray(pool, float)
        self.idx = np.asarray(idx, np.int64).reshape(len(self.breaks) - 1, -1)
        self.c0 = np.asarray(c0, float).reshape(self.idx.shape)
        self.c1 = np.asarray(c1, float).reshape(self.idx.shape)
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if self.breaks[0] != 0:
            raise ValueError("signals start at time 0")
        self.horizon = float(self.breaks[-1])
        self.kind = kind or ("piecewise-constant" if not np.any(self.c1) else "smooth-sampled")
        self.space = space
        if space is not None:
            self.check_space(space)

    def _pool_values(self):
        used = np.unique(self.idx)
        return [self.pool[i] for i in used]

    def breakpoints(self) -> np.ndarray:
        return self.breaks

    def _piece(self, t: float) -> int:
        i = int(np.searchsorted(self.breaks, t, side="right")) - 1
        return min(max(i, 0), len(self.breaks) - 2)

    def value(self, t: float) -> np.ndarray:
        i = self._piece(t)
        tau = t - self.breaks[i]
        w = self.c0[i] + self.c1[i] * tau
        return np.tensordot(w, self.pool[self.idx[i]], axes=1)

    def exp_integral(self, t0: float, t1: float, lam: np.ndarray) -> np.ndarray:
        out = np.zeros(self.pool.shape[1:])
        if t1 <= t0:
            return out
        i0 = self._piece(t0)
        i1 = self._piece(t1 - 1e-15 * max(1.0, abs(t1)))
        for i in range(i0, i1 + 1):
            a = max(t0, self.breaks[i])
            b = min(t1, self.breaks[i + 1]) if i < len(self.breaks) - 2 else t1
            if b <= a:
                continue
            h = b - a
            z = lam * h
            decay = np.exp(-lam * (t1 - b))
            w0 = decay * h * _phi1(z)
            w1 = decay * h * h * _psi(z)
            alpha = self.c0[i] + self.c1[i] * (a - self.breaks[i])
            beta = self.c1[i]
            for r in range(self.idx.shape[1]):
                wk = alpha[r] * w0 + beta[r] * w1
                if np.any(wk):
                    out += wk[:, None, None] * self.pool[self.idx[i, r]]
        return out

    def derivative(self) -> "PiecewiseAffine":
        return PiecewiseAffine(self.table, self.breaks, self.pool, self.idx, self.c1,
                               np.zeros_like(self.c1), kind="piecewise-constant")

    def to_json(self) -> dict:
        used = np.unique(self.idx)
        remap = {int(u): k for k, u in enumerate(used)}
        return {"kind": self.kind, "horizon": self.horizon, "breaks": self.breaks.tolist(),
                "pool": [field_to_json(self.table.to_field(self.pool[u])) for u in used],
                "idx": [[remap[int(x)] for x in row] for row in self.idx],
                "c0": self.c0.tolist(), "c1": self.c1.tolist()}

    @classmethod
    def from_json(cls, data: dict, table: ModeTable, space=None) -> "PiecewiseAffine":
        for key in ("breaks", "pool", "idx", "c0", "c1"):
            if key not in data:
                raise ValueError(f"signal.{key}: missing")
        pool = np.array([table.from_field(field_from_json(p, f"signal.pool[{i}]"))
                         for i, p in enumerate(data["pool"])])
        return cls(table, data["breaks"], pool, data["idx"], data["c0"], data["c1"],
                   kind=data.get("kind"), space=space)


def piecewise_constant(table: ModeTable, breaks, values, space=None) -> PiecewiseAffine:
    values = np.asarray(values, float)
    n = len(values)
    return PiecewiseAffine(table, breaks, values, np.arange(n)[:, None], np.ones((n, 1)),
                           np.zeros((n, 1)), kind="piecewise-constant", space=space)


def piecewise_linear(table: ModeTable, knots, values, space=None) -> PiecewiseAffine:
    """Continuous interpolant of ``values`` at ``knots``."""
    knots = np.asarray(knots, float)
    values = np.asarray(values, float)
    n = len(knots) - 1
    h = np.diff(knots)
    idx = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    c0 = np.tile([1.0, 0.0], (n, 1))
    c1 = np.stack([-1.0 / h, 1.0 / h], axis=1)
    return PiecewiseAffine(table, knots, values, idx, c0, c1, kind="smooth-sampled", space=space)


def constant_signal(table: ModeTable, horizon: float, value: np.ndarray, space=None) -> PiecewiseAffine:
    return piecewise_constant(table, [0.0, horizon], np.asarray(value, float)[None], space=space)


class SmoothSignal(ControlSignal):
    """Signal given by a callable; integrals use 8-point Gauss-Legendre per step."""

    kind = "smooth-sampled"

    def __init__(self, table: ModeTable, horizon: float, func: Callable[[float], np.ndarray],
                 deriv: Callable[[float], np.ndarray] | None = None, space=None,
                 fd_step: float = 1e-5) -> None:
        self.table = table
        self.horizon = float(horizon)
        self.func = func
        self.deriv = deriv
        self.fd_step = fd_step
        self.space = space
        if space is not None:
            self.check_space(space)

    def value(self, t: float) -> np.ndarray:
        return np.asarray(self.func(t), float)

    def exp_integral(self, t0: float, t1: float, lam: np.ndarray) -> np.ndarray:
        h = t1 - t0
        s = t0 + 0.5 * h * (_GL_NODES + 1)
        out = np.zeros((self.table.size, 2, 3))
        for si, wi in zip(s, _GL_WEIGHTS):
            out += (0.5 * h * wi * np.exp(-lam * (t1 - si)))[:, None, None] * self.value(si)
        return out

    def derivative(self) -> "SmoothSignal":
        if self.deriv is not None:
            return SmoothSignal(self.table, self.horizon, self.deriv)
        h = self.fd_step
        f = self.func
        return SmoothSignal(self.table, self.horizon, lambda t: (np.asarray(f(t + h)) - np.asarray(f(t - h))) / (2 * h))


class SumSignal(ControlSignal):
    def __init__(self, parts: Sequence[ControlSignal]) -> None:
        flat = []
        for p in parts:
            flat.extend(p.parts if isinstance(p, SumSignal) else [p])
        if not flat:
            raise ValueError("empty sum")
        self.parts = flat
        self.table = flat[0].table
        self.horizon = flat[0].horizon
        for p in flat:
            if abs(p.horizon - self.horizon) > 1e-12:
                raise ValueError("summed signals must share the horizon")
        kinds = {p.kind for p in flat}
        self.kind = "piecewise-constant" if kinds == {"piecewise-constant"} else "smooth-sampled"

    def value(self, t):
        return sum(p.value(t) for p in self.parts)

    def breakpoints(self):
        return np.unique(np.concatenate([p.breakpoints() for p in self.parts]))

    def exp_integral(self, t0, t1, lam):
        return sum(p.exp_integral(t0, t1, lam) for p in self.parts)

    def derivative(self):
        return SumSignal([p.derivative() for p in self.parts])

    def _pool_values(self):
        return [v for p in self.parts for v in p._pool_values()]


class ScaledSignal(ControlSignal):
    def __init__(self, base: ControlSignal, alpha: float) -> None:
        self.base = base
        self.alpha = alpha
        self.table = base.table
        self.horizon = base.horizon
        self.kind = base.kind

    def value(self, t):
        return self.alpha * self.base.value(t)

    def breakpoints(self):
        return self.base.breakpoints()

    def exp_integral(self, t0, t1, lam):
        return self.alpha * self.base.exp_integral(t0, t1, lam)

    def derivative(self):
        return ScaledSignal(self.base.derivative(), self.alpha)

    def _pool_values(self):
        return [self.alpha * v for v in self.base._pool_values()]


def signal_to_json(sig: ControlSignal) -> dict:
    """JSON form of piecewise-affine signals and their sums and multiples."""
    if isinstance(sig, PiecewiseAffine):
        return sig.to_json()
    if isinstance(sig, SumSignal):
        return {"kind": "sum", "parts": [signal_to_json(p) for p in sig.parts]}
    if isinstance(sig, ScaledSignal):
        return {"kind": "scaled", "alpha": sig.alpha, "base": signal_to_json(sig.base)}
    raise ValueError(f"cannot serialise a {type(sig).__name__}")


def signal_from_json(data: dict, table: ModeTable) -> ControlSignal:
    if not isinstance(data, dict):
        raise ValueError("signal: expected an object")
    kind = data.get("kind")
    if kind == "sum":
        return SumSignal([signal_from_json(p, table) for p in data.get("parts", [])])
    if kind == "scaled":
        return ScaledSignal(signal_from_json(data["base"], table), float(data["alpha"]))
    return PiecewiseAffine.from_json(data, table)


# trajectories

@dataclass
class Trajectory:
    """Recorded solution: states at ``times`` plus per-time diagnostics."""

    table: ModeTable
    cfg: SimConfig
    times: np.ndarray
    states: np.ndarray  # (N, K, 2, 3)
    integrals: np.ndarray  # running integral of the state, same shape
    sq_integral_k1: float  # int_0^T |u|_{k+1}^2 dt
    b_constant: float = 0.0  # empirical sup of |B(u)|_k / (|u|_k |u|_{k+1})
    steps: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def hk_norms(self, k: float | None = None) -> np.ndarray:
        return self.table.norms(self.states, self.cfg.sobolev_k if k is None else k)

    def energy(self) -> np.ndarray:
        return 0.5 * self.table.norms(self.states, 0.0) ** 2

    def xk_norm(self) -> float:
        """sup_t |u|_k + (int |u|_{k+1}^2)^(1/2)."""
        return float(self.hk_norms().max() + math.sqrt(self.sq_integral_k1))

    def relaxation_norm(self, k: float | None = None) -> float:
        return float(self.table.norms(self.integrals, self.cfg.sobolev_k if k is None else k).max())

    def state_at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.states[i] + w * self.states[i + 1]

    def field_at(self, i: int) -> TrigField:
        return self.table.to_field(self.states[i])

    def csv_rows(self) -> list[tuple[float, float, float]]:
        e = self.energy()
        hk = self.hk_norms()
        return [(float(t), float(a), float(b)) for t, a, b in zip(self.times, e, hk)]

    def snapshots(self, times: Sequence[float]) -> list[dict]:
        return [{"time": float(t), "field": field_to_json(self.table.to_field(self.state_at(t)))} for t in times]


def trajectory_distance(a: Trajectory, b: Trajectory, k: float | None = None) -> float:
    """X_{T,k} distance on the shared recording grid: sup |du|_k + (int |du|_{k+1}^2)^(1/2)."""
    if len(a.times) != len(b.times) or np.any(np.abs(a.times - b.times) > 1e-12):
        raise ValueError("trajectories are recorded on different grids")
    k = a.cfg.sobolev_k if k is None else k
    d = a.states - b.states
    sup = a.table.norms(d, k).max()
    n1 = a.table.norms(d, k + 1) ** 2
    integral = float(np.trapezoid(n1, a.times))
    return float(sup + math.sqrt(max(integral, 0.0)))


def _time_grid(cfg: SimConfig, signals: Sequence[ControlSignal | None]) -> tuple[np.ndarray, np.ndarray]:
    """Uniform dt grid merged with every signal breakpoint; returns (grid, mask of uniform points)."""
    T = cfg.horizon
    n = max(1, int(round(T / cfg.dt)))
    uniform = np.linspace(0.0, T, n + 1)
    pts = [uniform]
    for s in signals:
        if s is not None:
            b = np.asarray(s.breakpoints(), float)
            pts.append(b[(b > 0) & (b < T)])
    grid = np.unique(np.concatenate(pts))
    # merge points closer than a rounding threshold, preferring uniform ones
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * max(1.0, T)])
    grid = grid[keep]
    grid[-1] = T
    mask = np.isin(grid, uniform)
    return grid, mask


def solve(u0: TrigField | np.ndarray, h: ControlSignal | None, eta: ControlSignal | None,
          zeta: ControlSignal | None, cfg: SimConfig, *, record_all: bool = False,
          observer: Callable[[float, float, np.ndarray, np.ndarray], None] | None = None) -> Trajectory:
    """Advance u' + L(u + zeta) + B(u + zeta) = h + eta from u0 on [0, horizon].

    Any of ``h``, ``eta``, ``zeta`` may be None (zero).  States are recorded on the
    uniform dt grid (every step when ``record_all``).  ``observer(t0, t1, u0, u1)``
    sees every internal step.
    """
    table = cfg.table()
    U = table.from_field(u0) if isinstance(u0, TrigField) else np.array(u0, float)
    if U.shape != (table.size, 2, 3):
        raise ValueError("initial state does not match the Galerkin table")
    for name, s in (("h", h), ("eta", eta), ("zeta", zeta)):
        if s is not None and abs(s.horizon - cfg.horizon) > 1e-12:
            raise ValueError(f"{name}: horizon {s.horizon} differs from the configuration horizon {cfg.horizon}")
    grid, mask = _time_grid(cfg, [h, eta, zeta])
    if record_all:
        mask = np.ones_like(mask)
    lam = cfg.nu * table.k2
    k = cfg.sobolev_k
    wk = table.k2 ** k
    wk1 = table.k2 ** (k + 1)
    ceiling = cfg.blowup_ceiling

    forcing = [s for s in (h, eta) if s is not None]
    rec_t = [0.0]
    rec_u = [U.copy()]
    rec_i = [np.zeros_like(U)]
    integ = np.zeros_like(U)
    sq = 0.0
    bconst = 0.0
    prev_n1 = float(np.sum(wk1[:, None, None] * U * U))
    z0 = zeta.value(0.0) if zeta is not None else None
    for step in range(len(grid) - 1):
        t0, t1 = grid[step], grid[step + 1]
        dt = t1 - t0
        E = np.exp(-lam * dt)
        phi = dt * _phi1(lam * dt)
        w = U if z0 is None else U + z0
        Bw = table.quadratic(w)
        Unew = E[:, None, None] * U - phi[:, None, None] * Bw
        for s in forcing:
            Unew += s.exp_integral(t0, t1, lam)
        if zeta is not None:
            Unew -= lam[:, None, None] * zeta.exp_integral(t0, t1, lam)
            z0 = zeta.value(t1)
        nk_w = math.sqrt(float(np.sum(wk[:, None, None] * w * w)))
        if nk_w > 0:
            nk1_w = math.sqrt(float(np.sum(wk1[:, None, None] * w * w)))
            nb = math.sqrt(float(np.sum(wk[:, None, None] * Bw * Bw)))
            bconst = max(bconst, nb / (nk_w * nk1_w))
        integ = integ + 0.5 * dt * (U + Unew)
        n1 = float(np.sum(wk1[:, None, None] * Unew * Unew))
        sq += 0.5 * dt * (prev_n1 + n1)
        prev_n1 = n1
        if observer is not None:
            observer(float(t0), float(t1), U, Unew)
        U = Unew
        nk = math.sqrt(float(np.sum(wk[:, None, None] * U * U)))
        if not math.isfinite(nk) or nk > ceiling:
            raise BlowUpError(float(t1), nk, ceiling)
        if mask[step + 1]:
            rec_t.append(float(t1))
            rec_u.append(U.copy())
            rec_i.append(integ.copy())
    return Trajectory(table, cfg, np.array(rec_t), np.array(rec_u), np.array(rec_i), sq, bconst, len(grid) - 1)


# Lipschitz probe

@dataclass
class ProbeRow:
    size: float
    input_distance: float
    trajectory_distance: float

    @property
    def ratio(self) -> float:
        return self.trajectory_distance / self.input_distance if self.input_distance > 0 else 0.0


def lipschitz_probe(u0: TrigField, h: ControlSignal | None, eta: ControlSignal | None,
                    zeta: ControlSignal | None, cfg: SimConfig, sizes: Sequence[float],
                    slot: str = "u0", direction: np.ndarray | None = None,
                    rng: np.random.Generator | None = None) -> list[ProbeRow]:
    """Finite-difference estimate of the data-to-solution Lipschitz constant.

    ``slot`` is ``"u0"`` (input distance in H^k) or ``"eta"`` (constant-in-time
    perturbation, input distance in L2(0,T; H^(k-1))).
    """
    table = cfg.table()
    rng = np.random.default_rng(0) if rng is None else rng
    k = cfg.sobolev_k
    if direction is None:
        direction = table.project(rng.standard_normal((table.size, 2, 3)) / (1 + table.k2[:, None, None]) ** (k / 2 + 1))
    base = solve(u0, h, eta, zeta, cfg)
    U0 = table.from_field(u0) if isinstance(u0, TrigField) else np.asarray(u0)
    rows = []
    for size in sizes:
        if slot == "u0":
            d = direction / table.norm(direction, k)
            pert = solve(U0 + size * d, h, eta, zeta, cfg)
            dist_in = size
        elif slot == "eta":
            d = direction / table.norm(direction, k - 1)
            extra = constant_signal(table, cfg.horizon, size * d)
            pert = solve(U0, h, extra if eta is None else eta + extra, zeta, cfg)
            dist_in = size * math.sqrt(cfg.horizon)
        else:
            raise ValueError(f"unknown slot {slot!r}")
        rows.append(ProbeRow(float(size), float(dist_in), trajectory_distance(base, pert)))
    return rows
