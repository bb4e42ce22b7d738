"""Saturating control spaces: the extension operator, its ladder, and replayable certificates.

A :class:`ModeSpace` is a finite-dimensional space of divergence-free trigonometric
fields.  Coordinates at a canonical mode ``m`` are the frame components
``(cos.l1, cos.l2, sin.l1, sin.l2)``; since the frame is orthonormal these
coordinates carry the L2 structure of the fields.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fourier import (TrigField, bilinear_B, field_from_json, field_to_json, leray_project,
                      random_field, single_mode)
from .lattice import (LatticeSet, Triple, _parallel, canonical, canonical_box, grow_ladder,
                      integer_span_membership, mode_frame)

SPAN_TOL = 1e-10
RANK_TOL = 1e-9
PLANES = ("cos", "sin")


@functools.lru_cache(maxsize=None)
def _frame(m: Triple) -> np.ndarray:
    f = np.stack(mode_frame(m))
    f.setflags(write=False)
    return f


def _orthonormal_rows(rows: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (as rows) of the row space of ``rows``."""
    rows = np.asarray(rows, float)
    if rows.size == 0:
        return np.zeros((0, rows.shape[1] if rows.ndim == 2 else 0))
    norms = np.linalg.norm(rows, axis=1)
    rows = rows[norms > 0] / norms[norms > 0, None]
    if len(rows) == 0:
        return np.zeros((0, rows.shape[1]))
    if len(rows) > rows.shape[1]:
        rows = np.linalg.qr(rows, mode="r")
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    return vt[s > tol * max(1.0, s[0])]


def field_coords(u: TrigField, modes: Sequence[Triple]) -> tuple[np.ndarray, float]:
    """Frame coordinates of u on ``modes`` and the norm of the part of u outside them."""
    index = {m: i for i, m in enumerate(modes)}
    out = np.zeros(4 * len(modes))
    outside = 0.0
    for k, c, s in zip(u.modes.tolist(), u.cos, u.sin):
        i = index.get(tuple(k))
        if i is None:
            outside += float(c @ c + s @ s)
            continue
        F = _frame(tuple(k))
        out[4 * i:4 * i + 2] = F @ c
        out[4 * i + 2:4 * i + 4] = F @ s
    return out, math.sqrt(outside)


def coords_to_field(vec: np.ndarray, modes: Sequence[Triple], tol: float = 0.0) -> TrigField:
    vec = np.asarray(vec, float).reshape(len(modes), 4)
    keep = np.abs(vec).max(axis=1, initial=0) > tol
    if not np.any(keep):
        return TrigField()
    ms = [m for m, k in zip(modes, keep) if k]
    F = np.array([_frame(m) for m in ms])
    v = vec[keep]
    cos = np.einsum("kf,kfj->kj", v[:, :2], F)
    sin = np.einsum("kf,kfj->kj", v[:, 2:], F)
    return TrigField(np.array(ms, np.int64), cos, sin, check=False)


class ModeSpace:
    """Span of finitely many trigonometric fields, kept as an orthonormal coordinate basis."""

    __slots__ = ("modes", "basis", "generators", "_index", "_components")

    def __init__(self, modes: Sequence[Triple], basis: np.ndarray,
                 generators: Sequence[TrigField] = ()) -> None:
        self.modes: tuple[Triple, ...] = tuple(tuple(int(x) for x in m) for m in modes)
        self.basis = np.asarray(basis, float).reshape(-1, 4 * len(self.modes))
        self.basis.setflags(write=False)
        self.generators = tuple(generators)
        self._index = {m: i for i, m in enumerate(self.modes)}
        self._components: dict = {}

    @classmethod
    def from_generators(cls, fields: Iterable[TrigField]) -> "ModeSpace":
        fields = [f for f in fields]
        modes = sorted({tuple(int(x) for x in k) for f in fields for k in f.modes.tolist()})
        rows = np.array([field_coords(f, modes)[0] for f in fields]) if fields else np.zeros((0, 4 * len(modes)))
        basis = _orthonormal_rows(rows)
        # drop modes the span does not touch
        used = [i for i in range(len(modes)) if np.any(np.abs(basis[:, 4 * i:4 * i + 4]) > 0)] if len(basis) else []
        cols = np.concatenate([np.arange(4 * i, 4 * i + 4) for i in used]) if used else np.zeros(0, int)
        return cls([modes[i] for i in used], basis[:, cols], fields)

    @classmethod
    def from_coords(cls, modes: Sequence[Triple], rows: np.ndarray) -> "ModeSpace":
        return cls(modes, _orthonormal_rows(rows))

    @property
    def dim(self) -> int:
        return len(self.basis)

    def __repr__(self) -> str:
        return f"ModeSpace(dim={self.dim}, modes={len(self.modes)})"

    def basis_fields(self) -> list[TrigField]:
        return [coords_to_field(row, self.modes, 1e-14) for row in self.basis]

    def residual(self, u: TrigField) -> float:
        """Norm of u minus its orthogonal projection, relative to max(1, |u|)."""
        v, outside = field_coords(u, self.modes)
        r = v - self.basis.T @ (self.basis @ v) if self.dim else v
        total = math.sqrt(float(v @ v) + outside ** 2)
        return math.sqrt(float(r @ r) + outside ** 2) / max(1.0, total)

    def contains(self, u: TrigField, tol: float = SPAN_TOL) -> bool:
        return self.residual(u) <= tol

    def project(self, u: TrigField) -> TrigField:
        v, _ = field_coords(u, self.modes)
        if self.dim == 0:
            return TrigField()
        return coords_to_field(self.basis.T @ (self.basis @ v), self.modes, 0.0)

    def includes(self, other: "ModeSpace", tol: float = SPAN_TOL) -> bool:
        return all(self.contains(f, tol) for f in other.basis_fields())

    def component(self, m: Sequence[int]) -> np.ndarray:
        """Orthonormal frame-coordinate basis (r, 4) of the fields in this space living at mode m alone."""
        m = canonical(m)
        hit = self._components.get(m)
        if hit is not None:
            return hit
        i = self._index.get(m)
        if i is None or self.dim == 0:
            comp = np.zeros((0, 4))
        else:
            block = self.basis[:, 4 * i:4 * i + 4]
            # the compression of the projector onto the mode's 4 coordinates has eigenvalue 1 exactly on the intersection
            w, v = np.linalg.eigh(block.T @ block)
            comp = v[:, w > 1.0 - 1e-9].T.copy()
        comp.setflags(write=False)
        self._components[m] = comp
        return comp

    def plane_dim(self, m: Sequence[int], plane: str) -> int:
        """Dimension of the intersection with the cos (A) or sin (B) plane at m."""
        comp = self.component(m)
        if len(comp) == 0:
            return 0
        return len(_half_subspace(comp, 0 if plane == "cos" else 1))

    def reaches(self, m: Sequence[int], plane: str) -> bool:
        return self.plane_dim(m, plane) == 2

    def planes_reached(self) -> dict[Triple, tuple[bool, bool]]:
        return {m: (self.reaches(m, "cos"), self.reaches(m, "sin")) for m in self.modes}

    def truncated(self, radius: int) -> "ModeSpace":
        """Intersection with the fields supported in |l|_inf <= radius."""
        keep = [i for i, m in enumerate(self.modes) if max(abs(x) for x in m) <= radius]
        if len(keep) == len(self.modes):
            return self
        drop = [i for i in range(len(self.modes)) if i not in keep]
        dcols = np.concatenate([np.arange(4 * i, 4 * i + 4) for i in drop])
        kcols = np.concatenate([np.arange(4 * i, 4 * i + 4) for i in keep]) if keep else np.zeros(0, int)
        _, s, vt = np.linalg.svd(self.basis[:, dcols].T, full_matrices=True)
        rank = int(np.sum(s > 1e-9))
        combos = vt[rank:]
        rows = combos @ self.basis[:, kcols]
        return ModeSpace.from_coords([self.modes[i] for i in keep], rows)

    def to_json(self) -> dict:
        return {"modes": [list(m) for m in self.modes], "basis": self.basis.tolist()}


def _dual_directions(space: ModeSpace, m: Triple) -> np.ndarray:
    """Frame directions d (2-vectors) with both d cos and d sin at m inside the space."""
    comp = space.component(m)
    if len(comp) == 0:
        return np.zeros((0, 2))
    # a cos-only vector is (d, 0), a sin-only one is (0, d)
    cos_dirs = _half_subspace(comp, 0)
    sin_dirs = _half_subspace(comp, 1)
    if len(cos_dirs) == 0 or len(sin_dirs) == 0:
        return np.zeros((0, 2))
    # intersect two subspaces of R^2
    pc = cos_dirs.T @ cos_dirs
    ps = sin_dirs.T @ sin_dirs
    w, v = np.linalg.eigh(pc + ps)
    return v[:, w > 2.0 - 1e-9].T


def _half_subspace(comp: np.ndarray, half: int) -> np.ndarray:
    keep = slice(0, 2) if half == 0 else slice(2, 4)
    other = slice(2, 4) if half == 0 else slice(0, 2)
    _, s, vt = np.linalg.svd(comp[:, other].T, full_matrices=True)
    rank = int(np.sum(s > 1e-9))
    null = vt[rank:]
    if len(null) == 0:
        return np.zeros((0, 2))
    return _orthonormal_rows(null @ comp[:, keep])


# standard spaces

def space_from_lattice(K: Iterable[Sequence[int]]) -> ModeSpace:
    """E(K): full cos and sin planes at every mode of K."""
    gens = []
    for ell in LatticeSet(K):
        for f in _frame(canonical(ell)):
            gens.append(single_mode(ell, cos=f))
            gens.append(single_mode(ell, sin=f))
    return ModeSpace.from_generators(gens)


def directed_space(pairs: Iterable[tuple[Sequence[int], Sequence[float]]]) -> ModeSpace:
    """Span of d cos<m,x> and d sin<m,x> with d projected orthogonally to m, for each (m, d)."""
    gens = []
    for m, d in pairs:
        gens.append(single_mode(m, cos=d, project=True))
        gens.append(single_mode(m, sin=d, project=True))
    gens = [g for g in gens if len(g)]
    return ModeSpace.from_generators(gens)


VERTICAL_MODES = ((1, 0, 0), (0, 1, 0), (1, 0, 1), (0, 1, 1))


def vertical_space(K: Iterable[Sequence[int]] = VERTICAL_MODES) -> ModeSpace:
    """Controls acting on the third velocity component only, projected: 8-dim for the default K."""
    return directed_space((m, (0.0, 0.0, 1.0)) for m in K)


SIX_DIM_GENERATORS = (((1, 0, 1), (1.0, 1.0, 1.0)), ((0, 1, 1), (0.0, 0.0, 1.0)), ((0, 0, 1), (1.0, 0.0, 0.0)))


def six_dim_space() -> ModeSpace:
    """The 6-dim space with directions (1,1,1), (0,0,1), (1,0,0) at (1,0,1), (0,1,1), (0,0,1)."""
    return directed_space(SIX_DIM_GENERATORS)


BUILTIN_SPACES = {
    "generator12": lambda: space_from_lattice([(1, 0, 0), (0, 1, 0), (0, 0, 1)]),
    "lavt": vertical_space,
    "lsdfavt": six_dim_space,
}


# the extension operator

def _in_radius(m: Triple, radius: int | None) -> bool:
    return radius is None or max(abs(x) for x in m) <= radius


@functools.lru_cache(maxsize=200_000)
def pair_tensor(m: Triple, n: Triple) -> tuple[Triple, Triple, np.ndarray]:
    """Symmetrised interaction of the frame bases at two canonical modes.

    Returns ``(m+n, c(m-n), T)`` with T of shape (4, 4, 2, 4): T[a, b, t] are the
    frame coordinates at target t of B(x, y) + B(y, x) for basis field a at m
    and basis field b at n.
    """
    Fm, Fn = _frame(m), _frame(n)
    z = np.zeros((2, 3))
    A = np.vstack([Fm, z])  # cos parts of the 4 basis fields at m
    S = np.vstack([z, Fm])
    C = np.vstack([Fn, z])
    D = np.vstack([z, Fn])
    mv, nv = np.array(m, float), np.array(n, float)
    ac, as_ = (A @ nv)[:, None, None], (S @ nv)[:, None, None]
    bc, bs = (C @ mv)[None, :, None], (D @ mv)[None, :, None]
    Ab, Sb = A[:, None, :], S[:, None, :]
    Cb, Db = C[None, :, :], D[None, :, :]
    cos_p = 0.5 * (ac * Db + as_ * Cb) + 0.5 * (bc * Sb + bs * Ab)
    sin_p = 0.5 * (-ac * Cb + as_ * Db) + 0.5 * (-bc * Ab + bs * Sb)
    cos_m = 0.5 * (ac * Db - as_ * Cb) + 0.5 * (bc * Sb - bs * Ab)
    sin_m = 0.5 * (ac * Cb + as_ * Db) - 0.5 * (bc * Ab + bs * Sb)
    tp = tuple(int(a + b) for a, b in zip(m, n))
    d = tuple(int(a - b) for a, b in zip(m, n))
    tm = canonical(d)
    if tm != d:
        sin_m = -sin_m
    Fp, Fq = _frame(tp), _frame(tm)
    T = np.empty((4, 4, 2, 4))
    T[:, :, 0, :2] = cos_p @ Fp.T
    T[:, :, 0, 2:] = sin_p @ Fp.T
    T[:, :, 1, :2] = cos_m @ Fq.T
    T[:, :, 1, 2:] = sin_m @ Fq.T
    T.setflags(write=False)
    return tp, tm, T


@dataclass
class PairProduct:
    """Record of one spanning element Q(x, y) = B(x, y) + B(y, x) with x at m and y at n."""

    m: Triple
    n: Triple
    x: np.ndarray  # frame coordinates (4,)
    y: np.ndarray


def _pair_products(E: ModeSpace, radius: int | None):
    """All Q(x, y) over basis vectors of the per-mode components at non-parallel mode pairs."""
    comps = {m: E.component(m) for m in E.modes}
    comps = {m: c for m, c in comps.items() if len(c) and _in_radius(m, radius)}
    keys = sorted(comps)
    vecs: list[tuple[dict, PairProduct]] = []
    for i, m in enumerate(keys):
        for n in keys[i + 1:]:
            if _parallel(m, n):
                continue
            tp, tm, T = pair_tensor(m, n)
            X, Y = comps[m], comps[n]
            out = np.einsum("ia,jb,abtk->ijtk", X, Y, T)
            for a in range(len(X)):
                for b in range(len(Y)):
                    parts = {}
                    if _in_radius(tp, radius):
                        parts[tp] = out[a, b, 0]
                    if _in_radius(tm, radius):
                        parts[tm] = parts.get(tm, 0) + out[a, b, 1]
                    parts = {k: v for k, v in parts.items() if np.abs(v).max() > 1e-14}
                    if parts:
                        vecs.append((parts, PairProduct(m, n, X[a], Y[b])))
    return vecs


def _assemble(E: ModeSpace, vecs) -> tuple[list[Triple], np.ndarray]:
    modes = sorted(set(E.modes) | {k for parts, _ in vecs for k in parts})
    idx = {m: i for i, m in enumerate(modes)}
    rows = np.zeros((E.dim + len(vecs), 4 * len(modes)))
    for i, m in enumerate(E.modes):
        j = idx[m]
        rows[:E.dim, 4 * j:4 * j + 4] = E.basis[:, 4 * i:4 * i + 4]
    for r, (parts, _) in enumerate(vecs):
        for k, v in parts.items():
            j = idx[k]
            rows[E.dim + r, 4 * j:4 * j + 4] = v
    return modes, rows


def f_extend(E: ModeSpace, radius: int | None = None) -> ModeSpace:
    """Certified part of the extension of E: E plus all B(x, y) + B(y, x) from per-mode pieces.

    For x, y at distinct non-parallel modes, B(x) = B(y) = 0 so
    c (B(x, y) + B(y, x)) = -B(-c x + y) for any real c; every output therefore
    has the witness returned by :func:`witness`.  With ``radius`` the terms
    beyond |l|_inf <= radius are discarded (Galerkin truncation).
    """
    vecs = _pair_products(E, radius)
    if not vecs:
        return E if radius is None else E.truncated(radius)
    modes, rows = _assemble(E, vecs)
    out = ModeSpace.from_coords(modes, rows)
    return out if radius is None else out.truncated(radius)


@dataclass
class Witness:
    """w = eta - sum_i B(zeta_i) with eta and every zeta_i in the space being extended."""

    eta: TrigField
    zetas: list[TrigField]
    residual: float


def witness(E: ModeSpace, w: TrigField, radius: int | None = None) -> Witness:
    """Reconstruct a representation of w in terms of E; raises if w is outside f_extend(E)."""
    vecs = _pair_products(E, radius)
    modes, rows = _assemble(E, vecs)
    target, outside = field_coords(w, modes)
    if outside > SPAN_TOL * max(1.0, np.linalg.norm(target)):
        raise ValueError("the field has modes outside the extension")
    coef, *_ = np.linalg.lstsq(rows.T, target, rcond=None)
    eta = coords_to_field(coef[:E.dim] @ E.basis, E.modes) if E.dim else TrigField()
    zetas = []
    for c, (_, pp) in zip(coef[E.dim:], vecs):
        if abs(c) < 1e-15:
            continue
        r = math.sqrt(abs(c))
        x = coords_to_field(pp.x, [pp.m])
        y = coords_to_field(pp.y, [pp.n])
        zetas.append(x * (-math.copysign(r, c)) + y * r)
    recon = eta
    for z in zetas:
        bz = bilinear_B(z)
        recon = recon - (bz.truncated(radius) if radius is not None else bz)
    diff = recon - w
    res = math.sqrt(float(np.sum(diff.cos ** 2) + np.sum(diff.sin ** 2)))
    scale = max(1.0, math.sqrt(float(np.sum(w.cos ** 2) + np.sum(w.sin ** 2))))
    if res > 1e-8 * scale:
        raise ValueError(f"the field is not in the extension (residual {res:.3e})")
    return Witness(eta, zetas, res / scale)


@dataclass
class Ladder:
    """E_0 = E, E_j = f_extend(E_{j-1}) truncated to ``radius``."""

    levels: list[ModeSpace]
    radius: int
    stable_at: int | None = None

    @property
    def final(self) -> ModeSpace:
        return self.levels[-1]

    def covers_box(self, depth: int | None = None) -> bool:
        space = self.levels[-1 if depth is None else depth]
        return all(space.reaches(m, p) for m in canonical_box(self.radius) for p in PLANES)

    def first_full_depth(self) -> int | None:
        for d in range(len(self.levels)):
            if self.covers_box(d):
                return d
        return None

    def csv_rows(self) -> list[tuple[int, str, str, int]]:
        """(depth, mode, plane, reached) for every depth >= 1 and every canonical mode in the box."""
        rows = []
        box = canonical_box(self.radius)
        for d in range(1, len(self.levels)):
            sp = self.levels[d]
            for m in box:
                for p in PLANES:
                    rows.append((d, "{} {} {}".format(*m), p, int(sp.reaches(m, p))))
        return rows


def ladder_levels(E: ModeSpace, depth: int, radius: int = 2) -> Ladder:
    if depth < 1:
        raise ValueError("ladder depth must be at least 1")
    if radius < 1:
        raise ValueError("truncation radius must be at least 1")
    cur = E.truncated(radius)
    levels = [cur]
    stable = None
    for d in range(1, depth + 1):
        if stable is not None:
            levels.append(cur)
            continue
        nxt = f_extend(cur, radius)
        if nxt.dim == cur.dim:
            stable = d - 1
            nxt = cur
        levels.append(nxt)
        cur = nxt
    return Ladder(levels, radius, stable)


def ladder(E: ModeSpace, depth: int, truncation_radius: int = 2) -> ModeSpace:
    return ladder_levels(E, depth, truncation_radius).final


# parity obstruction

@dataclass(frozen=True)
class ParityWitness:
    """Integer functional f and modulus q (0 = exact) with f.k = 0 mod q on K but f.target != 0 mod q."""

    functional: Triple
    modulus: int

    def holds_on(self, k: Sequence[int]) -> bool:
        v = sum(a * b for a, b in zip(self.functional, k))
        return v == 0 if self.modulus == 0 else v % self.modulus == 0


def parity_witness(K: Iterable[Sequence[int]], target: Sequence[int], bound: int = 3,
                   max_modulus: int = 12) -> ParityWitness | None:
    """Small certificate that ``target`` is not an integer combination of K; None if it is one."""
    K = [tuple(k) for k in LatticeSet(K)]
    if integer_span_membership(K, target):
        return None
    r = range(-bound, bound + 1)
    cands = sorted((f for f in itertools.product(r, r, r) if any(f)), key=lambda f: (sum(map(abs, f)), f))
    for q in [0] + list(range(2, max_modulus + 1)):
        for f in cands:
            w = ParityWitness(f, q)
            if all(w.holds_on(k) for k in K) and not w.holds_on(target):
                return w
    raise RuntimeError("no small witness found; increase bound or max_modulus")


# closure check on lattice ladders

def lemma_closure_check(K: Iterable[Sequence[int]], j: int, samples: int = 100,
                        rng: np.random.Generator | None = None,
                        target: Iterable[Sequence[int]] | None = None) -> bool:
    """Sample zeta in E(K_{j-1}) and test B(zeta) in E(K_j) (or in E(target) when given)."""
    if j < 1:
        raise ValueError("j must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    prev = grow_ladder(K, j - 1)
    nxt = grow_ladder(K, j) if target is None else LatticeSet(target)
    space = space_from_lattice(nxt)
    src = sorted({canonical(m) for m in prev})
    for _ in range(samples):
        z = random_field(rng, 0, modes=src)
        if not space.contains(bilinear_B(z)):
            return False
    return True


# certificates

def pair_claim(m: Sequence[int], a: Sequence[float], n: Sequence[int], b: Sequence[float],
               pattern: str) -> TrigField:
    """Closed-form output of the two-term patterns below, for a orthogonal to m and b to n.

    ``diff-cos``:  B(a cos m + b sin n) + B(-b cos n + a sin m) = P(<a,n> b - <b,m> a) cos(m - n)
    ``sum-cos``:   B(a cos m + b sin n) + B(b cos n + a sin m)  = P(<a,n> b + <b,m> a) cos(m + n)
    ``diff-sin``:  B(a cos m + b cos n) + B(a sin m + b sin n)  = P(<a,n> b - <b,m> a) sin(m - n)
    ``sum-sin``:   B(a sin m + b sin n) + B(a cos m - b cos n)  = P(<a,n> b + <b,m> a) sin(m + n)
    """
    m, n = np.asarray(m, int), np.asarray(n, int)
    a, b = np.asarray(a, float), np.asarray(b, float)
    an, bm = float(a @ n), float(b @ m)
    if pattern.startswith("diff"):
        v, t = an * b - bm * a, m - n
    else:
        v, t = an * b + bm * a, m + n
    if pattern.endswith("cos"):
        return leray_project({tuple(int(x) for x in t): (v, None)})
    return leray_project({tuple(int(x) for x in t): (None, v)})


def pair_arguments(m, a, n, b, pattern: str) -> tuple[TrigField, TrigField]:
    am_c, am_s = single_mode(m, cos=a), single_mode(m, sin=a)
    bn_c, bn_s = single_mode(n, cos=b), single_mode(n, sin=b)
    if pattern == "diff-cos":
        return am_c + bn_s, am_s - bn_c
    if pattern == "sum-cos":
        return am_c + bn_s, am_s + bn_c
    if pattern == "diff-sin":
        return am_c + bn_c, am_s + bn_s
    if pattern == "sum-sin":
        return am_s + bn_s, am_c - bn_c
    raise ValueError(f"unknown pattern {pattern!r}")


PATTERNS = ("diff-cos", "diff-sin", "sum-cos", "sum-sin")


@dataclass
class CertificateStep:
    level: int
    zeta1: TrigField
    zeta2: TrigField
    claimed: TrigField
    mode: Triple
    plane: str

    def to_json(self) -> dict:
        return {"level": self.level, "zeta1": field_to_json(self.zeta1), "zeta2": field_to_json(self.zeta2),
                "claimed": field_to_json(self.claimed), "span": {"mode": list(self.mode), "plane": self.plane}}


@dataclass
class Certificate:
    name: str
    generators: list[TrigField]
    steps: list[CertificateStep]
    targets: list[tuple[Triple, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"name": self.name,
                "generators": [field_to_json(g) for g in self.generators],
                "targets": [{"mode": list(m), "plane": p} for m, p in self.targets],
                "steps": [s.to_json() for s in self.steps]}


def synthesize_certificate(name: str, E: ModeSpace, targets: Sequence[Triple],
                           max_level: int = 6) -> Certificate:
    """Greedy replay of the two-term patterns until the cos and sin planes at ``targets`` are covered.

    Each level only uses fields established at earlier levels; a step is kept
    when it enlarges the set of directions available at its output mode.
    """
    targets = [canonical(t) for t in targets]
    gens = list(E.basis_fields())
    dirs: dict[Triple, np.ndarray] = {}
    for m in E.modes:
        d = _dual_directions(E, m)
        if len(d):
            dirs[m] = d
    steps: list[CertificateStep] = []

    def covered() -> bool:
        return all(t in dirs and len(dirs[t]) == 2 for t in targets)

    level = 0
    while not covered():
        level += 1
        if level > max_level:
            missing = [t for t in targets if t not in dirs or len(dirs[t]) < 2]
            raise RuntimeError(f"certificate synthesis stalled; uncovered modes {missing}")
        new_dirs = {m: d.copy() for m, d in dirs.items()}
        keys = sorted(dirs)
        for i, m in enumerate(keys):
            for n in keys[i + 1:]:
                if _parallel(m, n):
                    continue
                for da in dirs[m]:
                    for db in dirs[n]:
                        a = da @ _frame(m)
                        b = db @ _frame(n)
                        for kind in ("diff", "sum"):
                            claim_c = pair_claim(m, a, n, b, kind + "-cos")
                            if len(claim_c) == 0 or claim_c.max_abs() < 1e-12:
                                continue
                            t = tuple(int(x) for x in claim_c.modes[0])
                            vec = _frame(t) @ claim_c.cos[0]
                            vec = vec / np.linalg.norm(vec)
                            have = new_dirs.get(t, np.zeros((0, 2)))
                            if len(have) and np.linalg.norm(vec - have.T @ (have @ vec)) < 1e-9:
                                continue
                            new_dirs[t] = _orthonormal_rows(np.vstack([have, vec]))
                            for pat in (kind + "-cos", kind + "-sin"):
                                z1, z2 = pair_arguments(m, a, n, b, pat)
                                cl = pair_claim(m, a, n, b, pat)
                                steps.append(CertificateStep(level, z1, z2, cl, t, pat[-3:]))
        if all(len(new_dirs[k]) == len(dirs.get(k, ())) for k in new_dirs):
            raise RuntimeError("certificate synthesis stalled: no new directions")
        dirs = new_dirs
    # keep only the steps the targets depend on
    needed = set(targets)
    kept = []
    for st in sorted(steps, key=lambda s: -s.level):
        if st.mode in needed:
            kept.append(st)
            needed.update(tuple(int(x) for x in k) for z in (st.zeta1, st.zeta2) for k in z.modes.tolist())
    kept.sort(key=lambda s: s.level)
    return Certificate(name, gens, kept, [(t, p) for t in targets for p in PLANES])


BUILTIN_TARGETS = {
    "generator12": [(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1)],
    "lavt": [(0, 0, 1), (1, 0, 0), (0, 1, 0)],
    "lsdfavt": [(1, -1, 0), (1, 0, 0), (0, 0, 1)],
}


def builtin_certificate(name: str) -> Certificate:
    if name not in BUILTIN_SPACES:
        raise KeyError(f"unknown built-in certificate {name!r}; choose from {sorted(BUILTIN_SPACES)}")
    return synthesize_certificate(name, BUILTIN_SPACES[name](), BUILTIN_TARGETS[name])


@dataclass
class StepReport:
    index: int
    ok: bool
    residual: float = float("nan")
    available: bool = False
    in_span: bool = False
    error: str | None = None


@dataclass
class VerificationReport:
    name: str
    steps: list[StepReport]
    targets: list[tuple[Triple, str, bool]]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return (self.error is None and all(s.ok for s in self.steps)
                and all(t[2] for t in self.targets))

    def to_json(self) -> dict:
        return {"name": self.name, "ok": self.ok, "error": self.error,
                "steps": [{"index": s.index, "ok": s.ok, "residual": s.residual, "available": s.available,
                           "in_span": s.in_span, "error": s.error} for s in self.steps],
                "targets": [{"mode": list(m), "plane": p, "reached": r} for m, p, r in self.targets]}


def _norm(u: TrigField) -> float:
    return math.sqrt(float(np.sum(u.cos ** 2) + np.sum(u.sin ** 2)))


def verify_certificate(cert: Certificate | dict, tol: float = SPAN_TOL) -> VerificationReport:
    """Replay every step through B and the span checks; malformed input yields an error report."""
    if isinstance(cert, Certificate):
        cert = cert.to_json()
    if not isinstance(cert, dict):
        return VerificationReport("<unnamed>", [], [], "certificate must be a JSON object")
    name = str(cert.get("name", "<unnamed>"))
    try:
        gens_raw = cert["generators"]
        if not isinstance(gens_raw, list):
            raise ValueError("generators: expected an array")
        gens = [field_from_json(g, f"generators[{i}]") for i, g in enumerate(gens_raw)]
        steps_raw = cert["steps"]
        if not isinstance(steps_raw, list):
            raise ValueError("steps: expected an array")
    except KeyError as exc:
        return VerificationReport(name, [], [], f"missing field {exc.args[0]!r}")
    except ValueError as exc:
        return VerificationReport(name, [], [], str(exc))

    parsed = []
    reports: list[StepReport] = []
    for i, st in enumerate(steps_raw):
        try:
            if not isinstance(st, dict):
                raise ValueError("expected an object")
            for key in ("level", "zeta1", "zeta2", "claimed", "span"):
                if key not in st:
                    raise ValueError(f"missing field {key!r}")
            level = st["level"]
            if not isinstance(level, int) or level < 1:
                raise ValueError("level: expected a positive integer")
            z1 = field_from_json(st["zeta1"], f"steps[{i}].zeta1")
            z2 = field_from_json(st["zeta2"], f"steps[{i}].zeta2")
            cl = field_from_json(st["claimed"], f"steps[{i}].claimed")
            span = st["span"]
            if not isinstance(span, dict) or "mode" not in span or span.get("plane") not in PLANES:
                raise ValueError("span: expected {mode, plane in cos|sin}")
            parsed.append((i, level, z1, z2, cl, canonical(span["mode"]), span["plane"]))
        except (ValueError, TypeError) as exc:
            reports.append(StepReport(i, False, error=f"steps[{i}]: {exc}"))

    avail_cache: dict[int, ModeSpace] = {}

    def available(level: int) -> ModeSpace:
        if level not in avail_cache:
            fields_ = gens + [p[4] for p in parsed if p[1] < level]
            avail_cache[level] = ModeSpace.from_generators(fields_)
        return avail_cache[level]

    for i, level, z1, z2, cl, mode, plane in parsed:
        out = bilinear_B(z1) + bilinear_B(z2)
        res = _norm(out - cl) / max(1.0, _norm(cl))
        sp = available(level)
        avail = sp.contains(z1, tol) and sp.contains(z2, tol)
        plane_field_ok = all(tuple(int(x) for x in k) == mode for k in cl.modes.tolist())
        if plane == "cos":
            plane_field_ok = plane_field_ok and float(np.abs(cl.sin).max(initial=0)) <= tol
        else:
            plane_field_ok = plane_field_ok and float(np.abs(cl.cos).max(initial=0)) <= tol
        ok = res <= tol and avail and plane_field_ok
        reports.append(StepReport(i, ok, res, avail, plane_field_ok))
    reports.sort(key=lambda r: r.index)

    targets = []
    raw_targets = cert.get("targets", [])
    if raw_targets:
        final = ModeSpace.from_generators(gens + [p[4] for p in parsed])
        for t in raw_targets:
            try:
                m, p = canonical(t["mode"]), t["plane"]
            except (KeyError, TypeError, ValueError):
                return VerificationReport(name, reports, targets, f"malformed target {t!r}")
            targets.append((m, p, final.reaches(m, p)))
    return VerificationReport(name, reports, targets)
