"""Steering by fast oscillations: reference path, projection onto the ladder, and level-by-level descent.

The pipeline starts from a smooth velocity path ``phi`` joining the endpoint
velocities and generating (approximately) the target diffeomorphism, computes
the force that realises it exactly, projects that force onto a ladder space
E_N and then removes one ladder level at a time.  Each descent trades the
directions of E_j outside E_{j-1} for a fast-oscillating state shift with
values in E_{j-1}, and absorbs the shift into the force through its time
derivative.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .flow import (FlowMap, FlowTracker, Isotopy, _smooth_ramp, build_isotopy, c1_distance,
                   integrate_flow, table_path)
from .fourier import ModeTable, TrigField, field_from_json, random_field
from .nse import (ControlSignal, PiecewiseAffine, SimConfig, SmoothSignal, SumSignal, Trajectory,
                  constant_signal, piecewise_constant, solve, space_residual)
from .lattice import _parallel
from .saturation import (BUILTIN_SPACES, ModeSpace, directed_space, ladder_levels, pair_tensor,
                         space_from_lattice)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
IDENTITY_TOL = 1e-12


# problem description

@dataclass(frozen=True)
class StaircaseSettings:
    """Knobs of the descent; none of them comes with a theoretical value."""

    q: int = 4  # 2**q uniform pieces for the first piecewise-constant approximation
    rho: float = 0.1  # ramp fraction of each oscillation slot
    n_start: int = 4
    n_cap: int = 32
    ramp_fraction: float = 0.5  # share of the horizon used by each endpoint ramp
    flow_grid: int = 4
    flow_samples: int = 11
    identity_samples: int = 20
    max_depth: int = 6
    max_pieces: int = 400_000
    projection_tol: float = 1e-9
    decomposition: str = "min-trace"  # or "shift"

    @classmethod
    def from_mapping(cls, data: dict, path: str = "staircase") -> "StaircaseSettings":
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a table")
        kinds = {f: type(getattr(cls(), f)) for f in cls.__dataclass_fields__}
        kw = {}
        for key, val in data.items():
            where = f"{path}.{key}"
            if key not in kinds:
                raise ValueError(f"{where}: unknown key")
            if kinds[key] is str:
                if not isinstance(val, str):
                    raise ValueError(f"{where}: expected a string")
            elif kinds[key] is int:
                if not isinstance(val, int) or isinstance(val, bool):
                    raise ValueError(f"{where}: expected an integer")
            elif not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ValueError(f"{where}: expected a number")
            kw[key] = kinds[key](val)
        out = cls(**kw)
        if out.q < 0 or out.q > 12:
            raise ValueError(f"{path}.q: must lie in [0, 12]")
        if not 0 < out.rho < 1:
            raise ValueError(f"{path}.rho: must lie in (0, 1)")
        if out.n_start < 1 or out.n_cap < out.n_start:
            raise ValueError(f"{path}.n_cap: need 1 <= n_start <= n_cap")
        if not 0 < out.ramp_fraction <= 0.5:
            raise ValueError(f"{path}.ramp_fraction: must lie in (0, 0.5]")
        if out.flow_grid < 2:
            raise ValueError(f"{path}.flow_grid: must be at least 2")
        if out.decomposition not in ("min-trace", "shift"):
            raise ValueError(f"{path}.decomposition: must be 'min-trace' or 'shift'")
        if out.flow_samples < 2:
            raise ValueError(f"{path}.flow_samples: must be at least 2")
        return out


def _space_from_spec(spec, path: str) -> ModeSpace:
    if isinstance(spec, str):
        if spec not in BUILTIN_SPACES:
            raise ValueError(f"{path}: unknown built-in space {spec!r}; choose from {sorted(BUILTIN_SPACES)}")
        return BUILTIN_SPACES[spec]()
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: expected a built-in name or a table")
    if "builtin" in spec:
        return _space_from_spec(spec["builtin"], f"{path}.builtin")
    if "modes" in spec:
        modes = spec["modes"]
        if not isinstance(modes, list) or not all(isinstance(m, list) and len(m) == 3 for m in modes):
            raise ValueError(f"{path}.modes: expected a list of integer triples")
        return space_from_lattice([tuple(int(v) for v in m) for m in modes])
    if "generators" in spec:
        pairs = []
        for i, g in enumerate(spec["generators"]):
            if not isinstance(g, dict) or "mode" not in g or "direction" not in g:
                raise ValueError(f"{path}.generators[{i}]: expected {{mode, direction}}")
            pairs.append((tuple(int(v) for v in g["mode"]), tuple(float(v) for v in g["direction"])))
        return directed_space(pairs)
    raise ValueError(f"{path}: expected one of builtin, modes, generators")


def _field_from_spec(spec, table: ModeTable, k: float, path: str, space: ModeSpace | None = None) -> TrigField:
    """Field from a {kind = zero | field | random} table.

    Random fields accept ``seed``, ``radius`` and ``in_space`` (project onto
    ``space`` first); ``hk_norm`` rescales any field to that H^k norm.
    """
    if spec is None:
        return TrigField()
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: expected a table")
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return TrigField()
    if kind == "field":
        if "field" not in spec:
            raise ValueError(f"{path}.field: missing")
        u = field_from_json(spec["field"], f"{path}.field")
    elif kind == "random":
        seed = spec.get("seed", 0)
        if not isinstance(seed, int):
            raise ValueError(f"{path}.seed: expected an integer")
        radius = int(spec.get("radius", max(abs(int(x)) for x in table.modes.reshape(-1))))
        u = random_field(np.random.default_rng(seed), radius)
        if spec.get("in_space", False):
            if space is None:
                raise ValueError(f"{path}.in_space: no control space available here")
            u = space.project(u)
    else:
        raise ValueError(f"{path}.kind: unknown kind {kind!r}")
    arr = table.from_field(u)
    if "hk_norm" in spec:
        target = float(spec["hk_norm"])
        if target < 0:
            raise ValueError(f"{path}.hk_norm: must be nonnegative")
        nrm = table.norm(arr, k)
        arr = arr * (target / nrm) if nrm > 0 else arr
    return table.to_field(arr)


@dataclass
class SteeringProblem:
    """Endpoints, diffeomorphism target, fixed force and admissible control space."""

    u0: TrigField
    u1: TrigField
    psi_spec: dict
    h: ControlSignal | None
    E: ModeSpace
    epsilon: float
    cfg: SimConfig
    settings: StaircaseSettings = field(default_factory=StaircaseSettings)
    name: str = "problem"

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon: must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> "SteeringProblem":
        if not isinstance(data, dict):
            raise ValueError("<root>: expected a table")
        known = {"name", "epsilon", "space", "u0", "u1", "force", "isotopy", "sim", "staircase"}
        for key in data:
            if key not in known:
                raise ValueError(f"{key}: unknown key")
        cfg = SimConfig.from_mapping(data.get("sim", {}), "sim")
        table = cfg.table()
        eps = data.get("epsilon", 0.1)
        if not isinstance(eps, (int, float)) or isinstance(eps, bool) or not eps > 0:
            raise ValueError("epsilon: expected a positive number")
        if "space" not in data:
            raise ValueError("space: missing")
        E = _space_from_spec(data["space"], "space")
        u0 = _field_from_spec(data.get("u0"), table, cfg.sobolev_k, "u0", E)
        u1 = _field_from_spec(data.get("u1"), table, cfg.sobolev_k, "u1", E)
        h = None
        if data.get("force") is not None:
            fh = _field_from_spec(data["force"], table, cfg.sobolev_k, "force")
            if len(fh):
                h = constant_signal(table, cfg.horizon, table.from_field(fh))
        psi = data.get("isotopy", {"family": "identity"})
        if not isinstance(psi, dict):
            raise ValueError("isotopy: expected a table")
        psi = dict(psi)
        psi.setdefault("horizon", cfg.horizon)
        if abs(float(psi["horizon"]) - cfg.horizon) > 1e-12:
            raise ValueError("isotopy.horizon: must equal sim.horizon")
        settings = StaircaseSettings.from_mapping(data.get("staircase", {}))
        return cls(u0, u1, psi, h, E, float(eps), cfg, settings, str(data.get("name", "problem")))

    @classmethod
    def from_toml(cls, text: str) -> "SteeringProblem":
        import tomli
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ValueError(f"<toml>: {exc}") from None
        return cls.from_mapping(data)


# reference path

@dataclass
class Reference:
    """phi(t) = a'(t) u_iso(a(t)) + endpoint ramps, and the force eta0 that realises it."""

    problem: SteeringProblem
    isotopy: Isotopy
    trajectory: Trajectory  # phi sampled on the uniform grid
    control: SmoothSignal  # eta0
    state: Callable[[float], np.ndarray]
    flows: list[FlowMap]
    sample_times: np.ndarray
    relaxation_gap: float  # |||phi - u_iso|||
    target_gap: float  # C^1 distance of the time-T flow of phi from the target map


def _time_warp(t: float, T: float) -> tuple[float, float, float]:
    """a(t) = t - T sin(2 pi t / T) / (2 pi) with a' and a''; a' vanishes at both ends."""
    w = TWO_PI / T
    return t - math.sin(w * t) / w, 1.0 - math.cos(w * t), w * math.sin(w * t)


def _ramp(t: float, start: float, width: float) -> tuple[float, float]:
    s, ds = _smooth_ramp((t - start) / width)
    return s, ds / width


def reference_trajectory(problem: SteeringProblem) -> Reference:
    cfg = problem.cfg
    table = cfg.table()
    T = cfg.horizon
    iso = build_isotopy(problem.psi_spec)
    U0 = table.from_field(problem.u0)
    U1 = table.from_field(problem.u1)
    width = problem.settings.ramp_fraction * T
    lam = table.k2[:, None, None] * cfg.nu
    h = problem.h

    def iso_state(s):
        return iso.velocity_state(table, s)

    def state(t):
        a, da, _ = _time_warp(t, T)
        s0, _ = _ramp(t, 0.0, width)
        s1, _ = _ramp(t, T - width, width)
        out = (1.0 - s0) * U0 + s1 * U1
        if da:
            out = out + da * iso_state(a)
        return out

    def rate(t):
        a, da, dda = _time_warp(t, T)
        _, d0 = _ramp(t, 0.0, width)
        _, d1 = _ramp(t, T - width, width)
        out = -d0 * U0 + d1 * U1
        if dda:
            out = out + dda * iso_state(a)
        if da:
            out = out + da * da * iso.velocity_derivative(table, a)
        return out

    def eta0(t):
        p = state(t)
        out = rate(t) + lam * p + table.quadratic(p)
        if h is not None:
            out = out - h.value(t)
        return out

    control = SmoothSignal(table, T, eta0)
    n = max(1, int(round(T / cfg.dt)))
    times = np.linspace(0.0, T, n + 1)
    states = np.array([state(t) for t in times])
    steps = np.diff(times)[:, None, None, None]
    integrals = np.concatenate([np.zeros_like(states[:1]),
                                np.cumsum(0.5 * steps * (states[1:] + states[:-1]), axis=0)])
    n1 = table.norms(states, cfg.sobolev_k + 1) ** 2
    traj = Trajectory(table, cfg, times, states, integrals, float(np.trapezoid(n1, times)))

    iso_samples = np.array([iso_state(t) for t in times])
    diff = np.concatenate([np.zeros_like(states[:1]),
                           np.cumsum(0.5 * steps * ((states - iso_samples)[1:] + (states - iso_samples)[:-1]), axis=0)])
    gap = float(table.norms(diff, cfg.sobolev_k).max())

    st = problem.settings
    sample_times = np.linspace(0.0, T, st.flow_samples)
    support = np.abs(states).reshape(len(states), table.size, -1).max(axis=(0, 2)) > 0
    flows = integrate_flow(table_path(table, state, support), st.flow_grid, T, min(cfg.dt, 1e-2), sample_times)
    target_gap = c1_distance(flows[-1], iso.target(st.flow_grid))
    return Reference(problem, iso, traj, control, state, flows, sample_times, gap, target_gap)


# projections

class SpaceProjector:
    """Orthogonal projection of table states onto a ModeSpace (frame coordinates are orthonormal)."""

    def __init__(self, space: ModeSpace, table: ModeTable) -> None:
        self.space = space
        self.table = table
        K = table.size
        Bm = np.zeros((space.dim, 4 * K))
        for j, m in enumerate(space.modes):
            i = table.index.get(m)
            if i is None:
                if space.dim and np.any(np.abs(space.basis[:, 4 * j:4 * j + 4]) > 0):
                    raise ValueError(f"space mode {m} lies outside the Galerkin table")
                continue
            Bm[:, 4 * i:4 * i + 4] = space.basis[:, 4 * j:4 * j + 4]
        self.basis = Bm  # orthonormal rows in table frame coordinates

    def coords(self, arr: np.ndarray) -> np.ndarray:
        return self.table.to_frame(arr).reshape(arr.shape[:-3] + (-1,))

    def from_coords(self, vec: np.ndarray) -> np.ndarray:
        return self.table.from_frame(vec.reshape(vec.shape[:-1] + (self.table.size, 4)))

    def apply(self, arr: np.ndarray) -> np.ndarray:
        v = self.coords(arr)
        return self.from_coords((v @ self.basis.T) @ self.basis)

    def residual(self, arr: np.ndarray) -> float:
        return space_residual(self.space, self.table, arr)


def project_control(eta0: ControlSignal, E_N: ModeSpace) -> ControlSignal:
    """Pointwise orthogonal projection onto E_N."""
    proj = SpaceProjector(E_N, eta0.table)
    if isinstance(eta0, PiecewiseAffine):
        return PiecewiseAffine(eta0.table, eta0.breaks, proj.apply(eta0.pool), eta0.idx, eta0.c0, eta0.c1,
                               kind=eta0.kind)
    if isinstance(eta0, SumSignal):
        return SumSignal([project_control(p, E_N) for p in eta0.parts])
    return SmoothSignal(eta0.table, eta0.horizon, lambda t: proj.apply(eta0.value(t)))


_GL8 = np.polynomial.legendre.leggauss(8)


def piecewise_average(sig: ControlSignal, pieces: int, subdivisions: int = 4) -> PiecewiseAffine:
    """Per-interval averages on a uniform grid (composite Gauss-Legendre inside each interval)."""
    T = sig.horizon
    breaks = np.linspace(0.0, T, pieces + 1)
    nodes, weights = _GL8
    vals = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        acc = np.zeros((sig.table.size, 2, 3))
        sub = np.linspace(a, b, subdivisions + 1)
        for c, d in zip(sub[:-1], sub[1:]):
            for x, w in zip(nodes, weights):
                acc += 0.5 * (d - c) * w * sig.value(0.5 * (c + d) + 0.5 * (d - c) * x)
        vals.append(acc / (b - a))
    return piecewise_constant(sig.table, breaks, np.array(vals))


# convexification of one level

class Decomposer:
    """Writes the part of a state outside ``space`` as -sum_i B(xi_i) with xi_i in ``space``.

    The spanning products Q(x, y) = B(x, y) + B(y, x) over per-mode pieces of
    the space are the ones the extension operator uses.  A minimum-norm solve
    gives coefficients c_ab on Q(e_a, e_b); any symmetric M whose off-block
    entries are -c_ab satisfies sum_{a<b} M_ab Q(e_a, e_b) = sum_i B(xi_i) for
    M = sum_i xi_i xi_i^T, because B vanishes on single modes, and the xi_i
    are the scaled eigenvectors of M.

    ``method="min-trace"`` picks the positive semidefinite M of least weighted
    trace (a small SDP; weights |l|^(2 weight_k) per coordinate), which keeps the
    oscillation amplitudes and their number low.  ``method="shift"`` keeps the
    minimum-norm off-block entries and fills the diagonal blocks with a scalar
    shift; it needs no solver and serves as the fallback.
    """

    def __init__(self, space: ModeSpace, table: ModeTable, radius: int, method: str = "min-trace",
                 weight_k: float = 0.0) -> None:
        if method not in ("min-trace", "shift"):
            raise ValueError(f"unknown decomposition method {method!r}")
        self.space = space
        self.table = table
        self.method = method
        self.fallbacks = 0
        self.proj = SpaceProjector(space, table)
        K = table.size
        comps = {m: space.component(m) for m in space.modes}
        comps = {m: c for m, c in comps.items() if len(c) and max(abs(x) for x in m) <= radius}
        keys = sorted(comps)
        self.offsets = {}
        embed = []  # component coordinates -> table frame coordinates
        off = 0
        for m in keys:
            self.offsets[m] = off
            for row in comps[m]:
                e = np.zeros(4 * K)
                i = table.index[m]
                e[4 * i:4 * i + 4] = row
                embed.append(e)
            off += len(comps[m])
        self.dim = off
        self.embed = np.array(embed).reshape(off, 4 * K)
        blocks, pos = [], []
        for i, m in enumerate(keys):
            for n in keys[i + 1:]:
                if _parallel(m, n):
                    continue
                tp, tm, Tt = pair_tensor(m, n)
                X, Y = comps[m], comps[n]
                out = np.einsum("ia,jb,abtk->ijtk", X, Y, Tt).reshape(len(X) * len(Y), 2, 4)
                block = np.zeros((len(out), 4 * K))
                for t, mode in ((0, tp), (1, tm)):
                    j = table.index.get(mode)
                    if j is not None:
                        block[:, 4 * j:4 * j + 4] += out[:, t]
                if not np.any(np.abs(block) > 1e-14):
                    continue
                blocks.append(block)
                om, on = self.offsets[m], self.offsets[n]
                pos.extend((om + a, on + b) for a in range(len(X)) for b in range(len(Y)))
        self.n_products = len(pos)
        self.pos = np.array(pos, np.int64).reshape(-1, 2)
        rows = np.vstack(blocks) if blocks else np.zeros((0, 4 * K))
        P = self.proj.basis
        perp = rows - (rows @ P.T) @ P if len(P) and len(rows) else rows
        self.perpT = perp.T
        k2 = np.sum(self.embed.reshape(off, K, 4) ** 2, axis=2) @ table.k2
        self.weights = k2 ** weight_k
        self._sdp = None
        if len(rows):
            self.solver = np.linalg.pinv(perp.T, rcond=1e-10)
            self.reach = perp.T @ self.solver  # projector onto the part of the complement the products reach
        else:
            self.solver = np.zeros((0, 4 * K))
            self.reach = np.zeros((4 * K, 4 * K))

    def _complement(self, value: np.ndarray) -> tuple[np.ndarray, float] | None:
        """Frame coordinates of the part of ``value`` outside the space, or None when it lies inside."""
        w = self.proj.coords(value)
        P = self.proj.basis
        r = w - (w @ P.T) @ P if len(P) else w
        scale = max(1.0, float(np.linalg.norm(w)))
        if float(np.linalg.norm(r)) <= 1e-14 * scale:
            return None
        miss = r - self.reach @ r
        if np.linalg.norm(miss) > 1e-9 * scale:
            j = int(np.argmax(np.abs(miss)))
            mode = tuple(int(x) for x in self.table.modes[j // 4])
            plane = "cos" if j % 4 < 2 else "sin"
            raise ValueError(f"no witness for the direction at mode {mode} ({plane} plane, frame index {j % 2}); "
                             f"residual {np.linalg.norm(miss):.3e}")
        return r, scale

    def coefficient_matrix(self, value: np.ndarray) -> np.ndarray | None:
        """Symmetric S with S_ab = -c_ab off the diagonal blocks, or None when value lies in the space."""
        got = self._complement(value)
        if got is None:
            return None
        coef = self.solver @ got[0]
        S = np.zeros((self.dim, self.dim))
        S[self.pos[:, 0], self.pos[:, 1]] = -coef
        return S + S.T

    def _shift_factor(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w, V = np.linalg.eigh(S)
        mu = w + max(0.0, -float(w[0]))
        keep = mu > 1e-13 * max(1.0, float(mu.max()))
        return mu[keep], V[:, keep]

    def _min_trace_factor(self, r: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray] | None:
        import cvxpy as cp
        if self._sdp is None:
            U, sv, _ = np.linalg.svd(self.perpT, full_matrices=False)
            U = U[:, sv > 1e-10 * sv[0]]
            G = U.T @ self.perpT
            M = cp.Variable((self.dim, self.dim), symmetric=True)
            rhs = cp.Parameter(G.shape[0])
            prob = cp.Problem(cp.Minimize(self.weights @ cp.diag(M)),
                              [M >> 0, G @ M[self.pos[:, 0], self.pos[:, 1]] == -rhs])
            self._sdp = (U, M, rhs, prob)
        U, M, rhs, prob = self._sdp
        rhs.value = U.T @ r
        try:
            prob.solve(solver=cp.CLARABEL)
        except cp.error.SolverError:
            return None
        if prob.status not in ("optimal", "optimal_inaccurate") or M.value is None:
            return None
        w, V = np.linalg.eigh(0.5 * (M.value + M.value.T))
        keep = w > 1e-7 * max(float(w.max()), 1e-300)
        if not np.any(keep):
            return None
        # the solver answer is accurate to ~1e-8; Gauss-Newton on the factor F (M = F F^T) makes it exact
        F = V[:, keep] * np.sqrt(w[keep])
        p, q = self.pos[:, 0], self.pos[:, 1]
        k = F.shape[1]
        for _ in range(8):
            miss = -self.perpT @ np.einsum("pi,pi->p", F[p], F[q]) - r
            if np.linalg.norm(miss) <= 1e-13 * scale:
                break
            # d M_pq / d F_ai = [a = p] F_qi + [a = q] F_pi
            Jpos = np.zeros((len(p), self.dim, k))
            rows = np.arange(len(p))
            Jpos[rows, p] += F[q]
            Jpos[rows, q] += F[p]
            J = -self.perpT @ Jpos.reshape(len(p), -1)
            step, *_ = np.linalg.lstsq(J, -miss, rcond=None)
            F = F + step.reshape(self.dim, k)
        else:
            return None
        mu, W = np.linalg.eigh(F.T @ F)
        keep = mu > 1e-13 * max(float(mu.max()), 1e-300)
        if not np.any(keep):
            return None
        # orthogonal columns with the same F F^T
        G = F @ W[:, keep] / np.sqrt(mu[keep])
        return mu[keep], G

    def split(self, value: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """(eta, xis) with value = eta - sum B(xi), eta in the space up to rounding."""
        table = self.table
        got = self._complement(value)
        if got is None:
            return self.proj.apply(value), []
        factor = self._min_trace_factor(*got) if self.method == "min-trace" else None
        if factor is None:
            if self.method == "min-trace":
                self.fallbacks += 1
            factor = self._shift_factor(self.coefficient_matrix(value))
        mu, V = factor
        xis = [self.proj.from_coords(math.sqrt(float(m)) * (vec @ self.embed)) for m, vec in zip(mu, V.T)]
        eta = value + sum(table.quadratic(x) for x in xis)
        res = self.proj.residual(eta)
        if res > 1e-10:
            raise RuntimeError(f"decomposition left a residual {res:.3e} outside the lower space")
        return self.proj.apply(eta), xis


class SlotCapExceeded(RuntimeError):
    def __init__(self, slots: int, cap: int) -> None:
        super().__init__(f"{slots} oscillation slots exceed the cap {cap}")
        self.slots = slots
        self.cap = cap


@dataclass
class Convexified:
    zeta: PiecewiseAffine
    eta: PiecewiseAffine
    identity_residual: float
    oscillation_counts: list[int]  # p per piece
    amplitude: float  # largest H^0 norm of a zeta value


def _pwc_pieces(sig: ControlSignal) -> tuple[np.ndarray, list[np.ndarray]]:
    breaks = np.unique(np.concatenate([[0.0, sig.horizon], np.asarray(sig.breakpoints(), float)]))
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    return breaks, [sig.value(t) for t in mids]


def identity_residual(table: ModeTable, value: np.ndarray, eta: np.ndarray, zetas: Sequence[np.ndarray],
                      us: np.ndarray) -> float:
    """max over u of |(1/m) sum_j (B(u + z_j) + L z_j) - eta - (B(u) - value)| relative to the terms."""
    m = len(zetas)
    worst = 0.0
    for u in us:
        lhs = -eta.copy()
        for z in zetas:
            lhs += (table.quadratic(u + z) + table.stokes(z)) / m
        rhs = table.quadratic(u) - value
        scale = max(1.0, float(np.abs(rhs).max()), float(np.abs(lhs).max()))
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    return worst


def convexify_level(u_j: Trajectory | None, eta1: ControlSignal, E_prev: ModeSpace, n: int, *,
                    decomposer: Decomposer | None = None, radius: int | None = None,
                    identity_samples: int = 20, rng: np.random.Generator | None = None,
                    check_pieces: int | None = 16, max_slots: int | None = None) -> Convexified:
    """Fast-oscillating zeta_n and E_prev-valued eta reproducing eta1 on average.

    On each piece of the piecewise-constant ``eta1`` with value v, v = eta - sum_i B(xi_i);
    the piece is cut into n periods of m = 2p slots carrying sqrt(p) xi_1, ...,
    sqrt(p) xi_p, -sqrt(p) xi_1, ..., -sqrt(p) xi_p.  The averaging identity is
    checked on ``identity_samples`` random states (on at most ``check_pieces``
    pieces with nonzero oscillation, spread evenly; None checks all).
    Raises SlotCapExceeded as soon as the slot count passes ``max_slots``.
    """
    table = eta1.table
    if radius is None:
        radius = int(np.abs(table.modes).max())
    if n < 1:
        raise ValueError("oscillation index must be positive")
    if getattr(eta1, "kind", None) != "piecewise-constant":
        raise ValueError("eta1 must be piecewise constant; approximate it with piecewise_average first")
    dec = decomposer or Decomposer(E_prev, table, radius)
    rng = np.random.default_rng(0) if rng is None else rng
    breaks, values = _pwc_pieces(eta1)
    if max_slots is not None:
        # every piece with a nonzero value needs at least 2n slots
        busy = sum(1 for v in values if np.any(v))
        if busy * 2 * n > max_slots:
            raise SlotCapExceeded(busy * 2 * n, max_slots)
    pool = [table.zeros()]
    zb: list[float] = [0.0]
    z_idx: list[int] = []
    z_c: list[float] = []
    etas = []
    counts = []
    checks = []
    amp = 0.0
    for a, b, v in zip(breaks[:-1], breaks[1:], values):
        eta, xis = dec.split(v)
        etas.append(eta)
        p = len(xis)
        counts.append(p)
        if p == 0:
            zb.append(b)
            z_idx.append(0)
            z_c.append(0.0)
            continue
        base = len(pool)
        pool.extend(xis)
        rt = math.sqrt(p)
        amp = max(amp, rt * max(table.norm(x) for x in xis))
        slots = np.linspace(a, b, n * 2 * p + 1)
        zb.extend(slots[1:].tolist())
        for _ in range(n):
            for sign in (1.0, -1.0):
                for i in range(p):
                    z_idx.append(base + i)
                    z_c.append(sign * rt)
        checks.append((v, eta, [rt * x for x in xis] + [-rt * x for x in xis]))
        if max_slots is not None and len(z_idx) > max_slots:
            raise SlotCapExceeded(len(z_idx), max_slots)
    zb[-1] = breaks[-1]
    zeta = PiecewiseAffine(table, zb, np.array(pool), np.array(z_idx)[:, None], np.array(z_c)[:, None],
                           np.zeros((len(z_idx), 1)), kind="piecewise-constant")
    eta_sig = piecewise_constant(table, breaks, np.array(etas))
    resid = 0.0
    if checks and identity_samples:
        us = table.project(rng.standard_normal((identity_samples, table.size, 2, 3)))
        us /= (1.0 + table.k2[None, :, None, None])
        chosen = checks
        if check_pieces is not None and len(checks) > check_pieces:
            pick = np.linspace(0, len(checks) - 1, check_pieces).round().astype(int)
            chosen = [checks[i] for i in pick]
        for v, eta, zs in chosen:
            resid = max(resid, identity_residual(table, v, eta, zs, us))
    return Convexified(zeta, eta_sig, resid, counts, amp)


# absorbing the shift into the force

@dataclass
class Absorbed:
    eta_hat: ControlSignal
    zeta_hat: PiecewiseAffine
    relaxation: float  # sup_t |int_0^t zeta_hat|_k
    l4_gap: float  # (int |zeta - zeta_hat|_{k+1}^4)^(1/4)


def smooth_shift(zeta: PiecewiseAffine, rho: float) -> PiecewiseAffine:
    """Continuous piecewise-linear version of a piecewise-constant zeta, zero at 0 and T.

    Each jump is replaced by a linear ramp across the breakpoint taking a
    fraction rho/2 of both neighbouring pieces (rho of the first and last piece
    at the ends, where the ramp runs from or to zero).
    """
    if zeta.kind != "piecewise-constant":
        raise ValueError("zeta must be piecewise constant")
    br = zeta.breaks
    L = np.diff(br)
    npieces = len(L)
    zero = len(zeta.pool)
    pool = np.concatenate([zeta.pool, np.zeros((1,) + zeta.pool.shape[1:])])
    idx = np.concatenate([zeta.idx[:, 0], [zero]])
    c = np.concatenate([zeta.c0[:, 0], [0.0]])
    # per piece: ramp in, then the plateau [a + rho L/2, b - rho L/2]
    half = 0.5 * rho * L
    half_first = rho * L[0]
    half_last = rho * L[-1]
    seg_idx, seg_c0, seg_c1, seg_breaks = [], [], [], [0.0]
    prev = (zero, 0.0)
    for i in range(npieces):
        a, b = br[i], br[i + 1]
        lo = a + (half_first if i == 0 else half[i])
        hi = b - (half_last if i == npieces - 1 else half[i])
        cur = (idx[i], c[i])
        # ramp from prev value (at the previous plateau end) to cur at lo
        start = seg_breaks[-1]
        h = lo - start
        seg_idx.append((prev[0], cur[0]))
        seg_c0.append((prev[1], 0.0))
        seg_c1.append((-prev[1] / h, cur[1] / h))
        seg_breaks.append(lo)
        seg_idx.append((cur[0], zero))
        seg_c0.append((cur[1], 0.0))
        seg_c1.append((0.0, 0.0))
        seg_breaks.append(hi)
        prev = cur
    h = br[-1] - seg_breaks[-1]
    seg_idx.append((prev[0], zero))
    seg_c0.append((prev[1], 0.0))
    seg_c1.append((-prev[1] / h, 0.0))
    seg_breaks.append(br[-1])
    return PiecewiseAffine(zeta.table, seg_breaks, pool, np.array(seg_idx), np.array(seg_c0), np.array(seg_c1),
                           kind="smooth-sampled")


def _running_integral_sup(sig: PiecewiseAffine, k: float) -> float:
    """sup over knots and piece midpoints of |int_0^t sig|_k (exact integration of affine pieces)."""
    table = sig.table
    w = (table.k2 ** k)[:, None, None]
    acc = table.zeros()
    best = 0.0
    for i in range(len(sig.breaks) - 1):
        h = sig.breaks[i + 1] - sig.breaks[i]
        terms = [(sig.c0[i, r], sig.c1[i, r], sig.pool[sig.idx[i, r]]) for r in range(sig.idx.shape[1])
                 if sig.c0[i, r] or sig.c1[i, r]]
        if not terms:
            continue
        mid = acc + sum((c0 * h / 2 + c1 * h * h / 8) * P for c0, c1, P in terms)
        acc = acc + sum((c0 * h + c1 * h * h / 2) * P for c0, c1, P in terms)
        best = max(best, float(np.sum(w * mid * mid)), float(np.sum(w * acc * acc)))
    return math.sqrt(best)


def _l4_gap(zeta: PiecewiseAffine, rho: float, k: float) -> float:
    """Exact L4-in-time H^{k+1} distance between zeta and smooth_shift(zeta, rho).

    A linear ramp across a jump J that starts a before the jump and ends b after
    it contributes |J|^4 (a^5 + b^5) / (5 (a + b)^4); the end ramps are one-sided.
    """
    table = zeta.table
    L = np.diff(zeta.breaks)
    vals = [zeta.c0[i, 0] * zeta.pool[zeta.idx[i, 0]] for i in range(len(L))]
    total = 0.0
    for i in range(len(L) + 1):
        left = vals[i - 1] if i > 0 else table.zeros()
        right = vals[i] if i < len(L) else table.zeros()
        J = table.norm(right - left, k + 1)
        if J == 0:
            continue
        a = 0.0 if i == 0 else (rho if i == len(L) else 0.5 * rho) * L[i - 1]
        b = 0.0 if i == len(L) else (rho if i == 0 else 0.5 * rho) * L[i]
        total += J ** 4 * (a ** 5 + b ** 5) / (5 * (a + b) ** 4)
    return total ** 0.25


def absorb_zeta(zeta_n: PiecewiseAffine, eta: ControlSignal, rho: float = 0.1, k: float = 3.0) -> Absorbed:
    """eta_hat = eta + d/dt zeta_hat with zeta_hat the ramped version of zeta_n."""
    zh = smooth_shift(zeta_n, rho)
    eta_hat = SumSignal([eta, zh.derivative()])
    return Absorbed(eta_hat, zh, _running_integral_sup(zh, k), _l4_gap(zeta_n, rho, k))


# errors against the reference

@dataclass
class Run:
    trajectory: Trajectory
    flows: list[FlowMap]


def run_control(problem: SteeringProblem, ref: Reference, eta: ControlSignal) -> Run:
    cfg = problem.cfg
    tracker = FlowTracker(cfg.table(), problem.settings.flow_grid, ref.sample_times)
    traj = solve(problem.u0, problem.h, eta, None, cfg, observer=tracker)
    return Run(traj, tracker.maps)


def errors_between(a: Run, b: Run | Reference, k: float) -> tuple[float, float, float]:
    """(endpoint H^k, relaxation H^k, C^1 flow) distances between two runs."""
    ta, tb = a.trajectory, b.trajectory
    table = ta.table
    end = table.norm(ta.final - tb.final, k)
    relax = float(table.norms(ta.integrals - tb.integrals, k).max())
    flow = max(c1_distance(x, y) for x, y in zip(a.flows, b.flows))
    return end, relax, flow


# the staircase

@dataclass
class LevelRecord:
    level: int
    dim: int
    n: int
    endpoint_error: float
    relaxation_error: float
    flow_error: float
    xk_norm: float
    increment: float = 0.0  # distance from the previous level's run
    pieces: int = 0
    max_oscillations: int = 0
    identity_residual: float = 0.0
    zeta_relaxation: float = 0.0
    zeta_l4: float = 0.0
    amplitude: float = 0.0
    seconds: float = 0.0
    tried: list = field(default_factory=list)  # (n, increment) for every candidate

    @property
    def total(self) -> float:
        return self.endpoint_error + self.relaxation_error + self.flow_error


@dataclass
class StaircaseTrace:
    levels: list[LevelRecord]
    depth: int
    budget: float
    epsilon: float
    failed: bool
    reason: str = ""
    control_residual: float = 0.0  # largest distance of a control building block from its space

    CSV_HEADER = ("level", "n", "endpoint_error", "relaxation_error", "flow_error", "xk_norm")

    def csv_rows(self) -> list[tuple]:
        return [(r.level, r.n, r.endpoint_error, r.relaxation_error, r.flow_error, r.xk_norm) for r in self.levels]

    @property
    def final_error(self) -> float:
        return self.levels[-1].total if self.levels else math.inf

    def to_json(self) -> dict:
        return {"depth": self.depth, "epsilon": self.epsilon, "level_budget": self.budget,
                "failed": self.failed, "reason": self.reason, "final_error": self.final_error,
                "control_residual": self.control_residual,
                "levels": [{k: (v if not isinstance(v, float) or math.isfinite(v) else None)
                            for k, v in r.__dict__.items()} for r in self.levels]}


@dataclass
class StaircaseResult:
    control: ControlSignal
    trace: StaircaseTrace
    reference: Reference
    run: Run

    @property
    def failed(self) -> bool:
        return self.trace.failed


def choose_depth(problem: SteeringProblem, ref: Reference) -> tuple[int, list[ModeSpace]]:
    """Smallest ladder depth whose space captures the reference force (at the sample times)."""
    cfg = problem.cfg
    table = cfg.table()
    st = problem.settings
    samples = [ref.control.value(t) for t in np.linspace(0, cfg.horizon, 33)]
    levels = [problem.E.truncated(cfg.galerkin_radius)]
    lad = None
    for depth in range(st.max_depth + 1):
        if depth >= len(levels):
            if lad is None:
                lad = ladder_levels(problem.E, st.max_depth, cfg.galerkin_radius)
            levels = lad.levels
        sp = SpaceProjector(levels[depth], table)
        worst = max(sp.residual(v) for v in samples)
        if worst <= st.projection_tol:
            return depth, levels[:depth + 1]
        if lad is not None and lad.stable_at is not None and depth >= lad.stable_at:
            break
    log.warning("the ladder does not capture the reference force; using depth %d (restricted problem)",
                len(levels) - 1)
    return len(levels) - 1, levels


def run_staircase(problem: SteeringProblem, progress: Callable[[LevelRecord], None] | None = None) -> StaircaseResult:
    st = problem.settings
    cfg = problem.cfg
    table = cfg.table()
    k = cfg.sobolev_k
    ref = reference_trajectory(problem)
    depth, spaces = choose_depth(problem, ref)
    budget = problem.epsilon / (depth + 2)
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()

    eta = piecewise_average(project_control(ref.control, spaces[depth]), 2 ** st.q)
    run = run_control(problem, ref, eta)
    e, r, f = errors_between(run, ref, k)
    rec = LevelRecord(depth, spaces[depth].dim, 0, e, r, f, run.trajectory.xk_norm(),
                      pieces=len(eta.breaks) - 1, seconds=time.perf_counter() - t0)
    records = [rec]
    if progress:
        progress(rec)
    failed = False
    reason = ""
    if rec.total > 2 * budget:
        failed = True
        reason = f"projection and solver share {rec.total:.3g} exceeds {2 * budget:.3g}"
    for level in range(depth, 0, -1):
        t_level = time.perf_counter()
        lower = spaces[level - 1]
        dec = Decomposer(lower, table, cfg.galerkin_radius, st.decomposition, k + 1)
        best = None
        tried = []
        n = st.n_start
        stop_reason = ""
        while n <= st.n_cap:
            try:
                conv = convexify_level(run.trajectory, eta, lower, n, decomposer=dec, radius=cfg.galerkin_radius,
                                       identity_samples=st.identity_samples, rng=rng, max_slots=st.max_pieces)
            except SlotCapExceeded as exc:
                stop_reason = f"level {level}: {exc}"
                break
            pieces = len(conv.zeta.breaks) - 1
            if conv.identity_residual > IDENTITY_TOL:
                raise RuntimeError(f"level {level}: averaging identity residual {conv.identity_residual:.3e}")
            ab = absorb_zeta(conv.zeta, conv.eta, st.rho, k)
            nxt = run_control(problem, ref, ab.eta_hat)
            inc = sum(errors_between(nxt, run, k))
            tried.append((n, inc))
            log.info("level %d n=%d slots=%d increment=%.4g", level, n, pieces, inc)
            if best is None or inc < best[0]:
                best = (inc, n, conv, ab, nxt)
            if inc <= budget:
                break
            n *= 2
        if best is None:
            failed = True
            reason = stop_reason or f"level {level}: no admissible oscillation index"
            break
        inc, n_used, conv, ab, nxt = best
        if inc > budget:
            failed = True
            reason = reason or stop_reason or f"level {level}: increment {inc:.3g} above budget {budget:.3g} at n cap"
        eta = ab.eta_hat
        run = nxt
        e, r, f = errors_between(run, ref, k)
        rec = LevelRecord(level - 1, lower.dim, n_used, e, r, f, run.trajectory.xk_norm(), inc,
                          len(conv.zeta.breaks) - 1, max(conv.oscillation_counts), conv.identity_residual,
                          ab.relaxation, ab.l4_gap, conv.amplitude, time.perf_counter() - t_level, tried)
        records.append(rec)
        if progress:
            progress(rec)
    final = records[-1]
    if not failed and final.total >= problem.epsilon:
        failed = True
        reason = f"total error {final.total:.3g} not below epsilon {problem.epsilon:.3g}"
    trace = StaircaseTrace(records, depth, budget, problem.epsilon, failed, reason)
    final_space = spaces[records[-1].level]
    trace.control_residual = max((space_residual(final_space, table, v) for v in eta._pool_values()), default=0.0)
    return StaircaseResult(eta, trace, ref, run)
