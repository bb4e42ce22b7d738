"""Coefficient calculus for finite divergence-free trigonometric fields on the 3-torus.

A field is stored as a table of canonical wavevectors ``k`` (first nonzero
entry positive) with a cosine and a sine coefficient vector each, meaning
``sum_k cos_k cos<k,x> + sin_k sin<k,x>``.  Norms use the scaling in which
``l cos<k,x>`` and ``l sin<k,x>`` are orthonormal for every unit ``l`` orthogonal
to ``k``, i.e. the squared norm of a field is the sum of squared coefficients.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lattice import canonical, is_canonical, mode_frame

DIV_TOL = 1e-12


def _fold(modes: np.ndarray, cos: np.ndarray, sin: np.ndarray):
    """Move every mode to its canonical sign; sin coefficients flip with the mode."""
    modes = np.asarray(modes, dtype=np.int64).reshape(-1, 3)
    cos = np.asarray(cos, dtype=float).reshape(-1, 3)
    sin = np.asarray(sin, dtype=float).reshape(-1, 3).copy()
    first = np.where(modes[:, 0] != 0, modes[:, 0], np.where(modes[:, 1] != 0, modes[:, 1], modes[:, 2]))
    neg = first < 0
    modes = np.where(neg[:, None], -modes, modes)
    sin[neg] *= -1.0
    return modes, cos, sin


def _aggregate(modes: np.ndarray, cos: np.ndarray, sin: np.ndarray):
    """Sum coefficients of repeated modes; result sorted lexicographically."""
    if len(modes) == 0:
        return np.zeros((0, 3), np.int64), np.zeros((0, 3)), np.zeros((0, 3))
    uniq, inv = np.unique(modes, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    c = np.zeros((len(uniq), 3))
    s = np.zeros((len(uniq), 3))
    for d in range(3):
        c[:, d] = np.bincount(inv, weights=cos[:, d], minlength=len(uniq))
        s[:, d] = np.bincount(inv, weights=sin[:, d], minlength=len(uniq))
    return uniq, c, s


def _project(modes: np.ndarray, vec: np.ndarray) -> np.ndarray:
    k = modes.astype(float)
    k2 = np.einsum("ij,ij->i", k, k)
    dot = np.einsum("ij,ij->i", vec, k)
    return vec - (dot / k2)[:, None] * k


class TrigField:
    """Finite mean-zero divergence-free field; immutable.

    Build with ``TrigField(modes, cos, sin)`` from canonical data or with
    :func:`leray_project` from arbitrary raw coefficients.
    """

    __slots__ = ("modes", "cos", "sin")

    def __init__(self, modes=None, cos=None, sin=None, *, check: bool = True) -> None:
        if modes is None:
            modes = np.zeros((0, 3), np.int64)
            cos = np.zeros((0, 3))
            sin = np.zeros((0, 3))
        m = np.asarray(modes, dtype=np.int64).reshape(-1, 3)
        c = np.asarray(cos, dtype=float).reshape(-1, 3) if cos is not None else np.zeros((len(m), 3))
        s = np.asarray(sin, dtype=float).reshape(-1, 3) if sin is not None else np.zeros((len(m), 3))
        if check:
            if len(c) != len(m) or len(s) != len(m):
                raise ValueError("modes, cos and sin must have the same length")
            if np.any(np.all(m == 0, axis=1)):
                raise ValueError("a field has no zero-mode term")
            if not all(is_canonical(row) for row in m.tolist()):
                raise ValueError("modes must be canonical; use leray_project for raw data")
            if len(m) > 1:
                order = np.lexsort(m.T[::-1])
                if np.any(order != np.arange(len(m))) or len(np.unique(m, axis=0)) != len(m):
                    m, c, s = _aggregate(m, c, s)
            k = m.astype(float)
            scale = np.maximum(1.0, np.maximum(np.abs(c).max(axis=1, initial=0), np.abs(s).max(axis=1, initial=0)))
            kn = np.sqrt(np.einsum("ij,ij->i", k, k)) if len(k) else np.zeros(0)
            dc = np.abs(np.einsum("ij,ij->i", c, k)) / np.where(kn > 0, kn, 1)
            ds = np.abs(np.einsum("ij,ij->i", s, k)) / np.where(kn > 0, kn, 1)
            if np.any(dc > DIV_TOL * scale) or np.any(ds > DIV_TOL * scale):
                raise ValueError("coefficients must be orthogonal to their mode")
        for a in (m, c, s):
            a.setflags(write=False)
        object.__setattr__(self, "modes", m)
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "sin", s)

    def __setattr__(self, name, value):
        raise AttributeError("TrigField is immutable")

    def __len__(self) -> int:
        return len(self.modes)

    def __repr__(self) -> str:
        return f"TrigField({len(self.modes)} modes)"

    def terms(self) -> dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]]:
        return {tuple(int(x) for x in k): (c, s) for k, c, s in zip(self.modes, self.cos, self.sin)}

    # linear structure
    def __add__(self, other: "TrigField") -> "TrigField":
        if not isinstance(other, TrigField):
            return NotImplemented
        m, c, s = _aggregate(np.vstack([self.modes, other.modes]),
                             np.vstack([self.cos, other.cos]),
                             np.vstack([self.sin, other.sin]))
        return TrigField(m, c, s, check=False).pruned(0.0)

    def __neg__(self) -> "TrigField":
        return TrigField(self.modes, -self.cos, -self.sin, check=False)

    def __sub__(self, other: "TrigField") -> "TrigField":
        return self + (-other)

    def __mul__(self, alpha: float) -> "TrigField":
        a = float(alpha)
        return TrigField(self.modes, a * self.cos, a * self.sin, check=False)

    __rmul__ = __mul__

    def pruned(self, tol: float = 0.0) -> "TrigField":
        """Drop modes whose coefficients are all at most tol in absolute value."""
        keep = (np.abs(self.cos).max(axis=1, initial=0) > tol) | (np.abs(self.sin).max(axis=1, initial=0) > tol)
        return TrigField(self.modes[keep], self.cos[keep], self.sin[keep], check=False)

    def truncated(self, radius: int) -> "TrigField":
        keep = np.abs(self.modes).max(axis=1, initial=0) <= radius
        return TrigField(self.modes[keep], self.cos[keep], self.sin[keep], check=False)

    def coefficient(self, ell: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """(cos, sin) coefficients of the term at ell, zero if absent; ell may be non-canonical."""
        k = canonical(ell)
        hit = np.where(np.all(self.modes == np.array(k), axis=1))[0]
        if len(hit) == 0:
            return np.zeros(3), np.zeros(3)
        c, s = self.cos[hit[0]].copy(), self.sin[hit[0]].copy()
        if tuple(ell) != k:
            s = -s
        return c, s

    def max_abs(self) -> float:
        return float(max(np.abs(self.cos).max(initial=0), np.abs(self.sin).max(initial=0)))


def single_mode(ell: Sequence[int], cos=None, sin=None, *, project: bool = False) -> TrigField:
    """Field ``cos * cos<ell,x> + sin * sin<ell,x>`` for one wavevector of either sign."""
    c = np.zeros(3) if cos is None else np.asarray(cos, float)
    s = np.zeros(3) if sin is None else np.asarray(sin, float)
    if project:
        return leray_project({tuple(ell): (c, s)})
    k = canonical(ell)
    if tuple(int(x) for x in ell) != k:
        s = -s
    return TrigField(np.array([k]), c[None, :], s[None, :])


def basis_vector(ell: Sequence[int]) -> np.ndarray:
    """l(ell): first frame vector for canonical ell, second frame vector of -ell otherwise."""
    k = canonical(ell)
    f1, f2 = mode_frame(k)
    return f1 if tuple(int(x) for x in ell) == k else f2


def cos_basis(ell: Sequence[int]) -> TrigField:
    """c_ell = l(ell) cos<ell,x>."""
    return single_mode(ell, cos=basis_vector(ell))


def sin_basis(ell: Sequence[int]) -> TrigField:
    """s_ell = l(ell) sin<ell,x>."""
    return single_mode(ell, sin=basis_vector(ell))


def leray_project(raw) -> TrigField:
    """Project raw coefficients onto divergence-free mean-zero fields.

    ``raw`` maps a mode (any sign, zero allowed) to a pair (cos, sin), or is a
    tuple of arrays ``(modes, cos, sin)``.
    """
    if isinstance(raw, TrigField):
        modes, cos, sin = raw.modes, raw.cos, raw.sin
    elif isinstance(raw, Mapping):
        items = list(raw.items())
        if not items:
            return TrigField()
        modes = np.array([k for k, _ in items], dtype=np.int64)
        cos = np.array([np.zeros(3) if v[0] is None else v[0] for _, v in items], dtype=float)
        sin = np.array([np.zeros(3) if v[1] is None else v[1] for _, v in items], dtype=float)
    else:
        modes, cos, sin = raw
    modes, cos, sin = _fold(modes, cos, sin)
    nz = np.any(modes != 0, axis=1)
    modes, cos, sin = modes[nz], cos[nz], sin[nz]
    modes, cos, sin = _aggregate(modes, cos, sin)
    if len(modes) == 0:
        return TrigField()
    cos = _project(modes, cos)
    sin = _project(modes, sin)
    keep = np.any(cos != 0, axis=1) | np.any(sin != 0, axis=1)
    return TrigField(modes[keep], cos[keep], sin[keep], check=False)


def stokes_apply(u: TrigField) -> TrigField:
    k2 = np.einsum("ij,ij->i", u.modes, u.modes).astype(float)
    return TrigField(u.modes, u.cos * k2[:, None], u.sin * k2[:, None], check=False)


def interaction_terms(ma, A, S, mb, C, D):
    """Raw (unprojected) coefficients of <a,grad> b for a = (ma, A, S), b = (mb, C, D).

    Returns modes and cos/sin coefficients for all m + n and m - n, before
    folding and projection.
    """
    ma = np.asarray(ma, np.int64)
    mb = np.asarray(mb, np.int64)
    if len(ma) == 0 or len(mb) == 0:
        z = np.zeros((0, 3))
        return np.zeros((0, 3), np.int64), z, z
    nb = mb.astype(float)
    ac = A @ nb.T  # <A_m, n>
    as_ = S @ nb.T  # <S_m, n>
    Cn = C[None, :, :]
    Dn = D[None, :, :]
    acn = ac[:, :, None]
    asn = as_[:, :, None]
    cos_p = 0.5 * (acn * Dn + asn * Cn)
    sin_p = 0.5 * (-acn * Cn + asn * Dn)
    cos_m = 0.5 * (acn * Dn - asn * Cn)
    sin_m = 0.5 * (acn * Cn + asn * Dn)
    mp = (ma[:, None, :] + mb[None, :, :]).reshape(-1, 3)
    mm = (ma[:, None, :] - mb[None, :, :]).reshape(-1, 3)
    modes = np.vstack([mp, mm])
    cos = np.vstack([cos_p.reshape(-1, 3), cos_m.reshape(-1, 3)])
    sin = np.vstack([sin_p.reshape(-1, 3), sin_m.reshape(-1, 3)])
    return modes, cos, sin


def bilinear_B(a: TrigField, b: TrigField | None = None) -> TrigField:
    """Leray projection of <a, grad> b; ``bilinear_B(u)`` is the quadratic term B(u)."""
    if b is None:
        b = a
    modes, cos, sin = interaction_terms(a.modes, a.cos, a.sin, b.modes, b.cos, b.sin)
    out = leray_project((modes, cos, sin))
    scale = a.max_abs() * b.max_abs()
    return out.pruned(1e-15 * scale)


def inner(u: TrigField, v: TrigField) -> float:
    """L2 inner product in the normalisation where the trigonometric basis is orthonormal."""
    if len(u) == 0 or len(v) == 0:
        return 0.0
    allm = np.vstack([u.modes, v.modes])
    uniq, inv = np.unique(allm, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    iu, iv = inv[: len(u)], inv[len(u):]
    U = np.zeros((len(uniq), 6))
    V = np.zeros((len(uniq), 6))
    U[iu] = np.hstack([u.cos, u.sin])
    V[iv] = np.hstack([v.cos, v.sin])
    return float(np.sum(U * V))


def sobolev_norm(u: TrigField, k: float = 0.0) -> float:
    if k < 0:
        raise ValueError("Sobolev index must be nonnegative")
    if len(u) == 0:
        return 0.0
    k2 = np.einsum("ij,ij->i", u.modes, u.modes).astype(float)
    w = k2 ** k
    e = np.einsum("ij,ij->i", u.cos, u.cos) + np.einsum("ij,ij->i", u.sin, u.sin)
    return float(np.sqrt(np.sum(w * e)))


def evaluate_field(u: TrigField, x) -> np.ndarray:
    """Pointwise value; ``x`` is a point (3,) or an array of points (..., 3)."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    phase = pts @ u.modes.T.astype(float)
    out = np.cos(phase) @ u.cos + np.sin(phase) @ u.sin
    return out.reshape(x.shape)


def evaluate_gradient(u: TrigField, x) -> np.ndarray:
    """Jacobian d u_i / d x_j at points; shape (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    k = u.modes.astype(float)
    phase = pts @ k.T
    cp, sp = np.cos(phase), np.sin(phase)
    # d/dx_j [c cos(k.x) + s sin(k.x)] = (-c sin + s cos) k_j
    g = np.einsum("pm,mi,mj->pij", -sp, u.cos, k) + np.einsum("pm,mi,mj->pij", cp, u.sin, k)
    return g.reshape(x.shape[:-1] + (3, 3))


# snapshot format

def field_to_json(u: TrigField) -> dict:
    return {"modes": [{"ell": [int(x) for x in k], "cos": [float(v) for v in c], "sin": [float(v) for v in s]}
                      for k, c, s in zip(u.modes, u.cos, u.sin)]}


def field_from_json(data, path: str = "") -> TrigField:
    """Parse the snapshot object; errors name the offending field path."""
    if not isinstance(data, dict) or "modes" not in data:
        raise ValueError(f"{path or '<root>'}: expected an object with a 'modes' array")
    items = data["modes"]
    if not isinstance(items, list):
        raise ValueError(f"{path}.modes: expected an array")
    modes, cos, sin = [], [], []
    for i, it in enumerate(items):
        where = f"{path}.modes[{i}]"
        if not isinstance(it, dict):
            raise ValueError(f"{where}: expected an object")
        for key in ("ell", "cos", "sin"):
            if key not in it:
                raise ValueError(f"{where}.{key}: missing")
            v = it[key]
            if not isinstance(v, list) or len(v) != 3:
                raise ValueError(f"{where}.{key}: expected 3 numbers")
        if not all(isinstance(x, int) for x in it["ell"]):
            raise ValueError(f"{where}.ell: expected integers")
        modes.append(it["ell"])
        cos.append(it["cos"])
        sin.append(it["sin"])
    if not modes:
        return TrigField()
    m = np.array(modes, dtype=np.int64)
    c = np.array(cos, dtype=float)
    s = np.array(sin, dtype=float)
    if all(is_canonical(r) for r in m.tolist()):
        return TrigField(m, c, s)
    m, c, s = _fold(m, c, s)
    return TrigField(*_aggregate(m, c, s))


def dumps_field(u: TrigField) -> str:
    return json.dumps(field_to_json(u))


def loads_field(text: str) -> TrigField:
    return field_from_json(json.loads(text))


def random_field(rng: np.random.Generator, radius: int, scale: float = 1.0,
                 modes: Iterable[Sequence[int]] | None = None) -> TrigField:
    """Gaussian coefficients on every canonical mode with |l|_inf <= radius (or on ``modes``)."""
    from .lattice import canonical_box
    ms = canonical_box(radius) if modes is None else sorted({canonical(m) for m in modes})
    m = np.array(ms, dtype=np.int64)
    raw = rng.standard_normal((len(m), 2, 3)) * scale
    return TrigField(m, _project(m, raw[:, 0]), _project(m, raw[:, 1]), check=False)


class ModeTable:
    """Fixed set of canonical modes with array-level operators.

    States are arrays of shape (K, 2, 3): row i holds the cos and sin
    coefficient vectors of ``modes[i]``.  ``bilinear`` is the Galerkin
    truncation of B onto this mode set.
    """

    def __init__(self, modes: Iterable[Sequence[int]]) -> None:
        ms = sorted({canonical(m) for m in modes})
        if not ms:
            raise ValueError("a mode table needs at least one mode")
        self.modes = np.array(ms, dtype=np.int64)
        self.modes.setflags(write=False)
        self.index = {m: i for i, m in enumerate(ms)}
        self.size = len(ms)
        k = self.modes.astype(float)
        self.k2 = np.einsum("ij,ij->i", k, k)
        self.frames = np.array([np.stack(mode_frame(m)) for m in ms])  # (K, 2, 3)
        self._proj = np.eye(3)[None] - k[:, :, None] * k[:, None, :] / self.k2[:, None, None]
        self._build_pairs()

    @classmethod
    def box(cls, radius: int) -> "ModeTable":
        from .lattice import canonical_box
        return cls(canonical_box(radius))

    def _build_pairs(self) -> None:
        K = self.size
        m = self.modes
        tgt = []
        sgn = []
        for op in (1, -1):
            t = (m[:, None, :] + op * m[None, :, :]).reshape(-1, 3)
            first = np.where(t[:, 0] != 0, t[:, 0], np.where(t[:, 1] != 0, t[:, 1], t[:, 2]))
            flip = first < 0
            t = np.where(flip[:, None], -t, t)
            idx = np.array([self.index.get((int(a), int(b), int(c)), -1) for a, b, c in t])
            tgt.append(idx)
            sgn.append(np.where(flip, -1.0, 1.0))
        self._tp, self._tm = tgt
        self._sp, self._sm = sgn
        self._kf = m.astype(float)
        from scipy import sparse
        # valid (i, j) pairs per target kind, gathered from the flattened K x K grid
        self._flat_p = np.nonzero(self._tp >= 0)[0]
        self._flat_m = np.nonzero(self._tm >= 0)[0]
        self._jp = self._flat_p % K
        self._jm = self._flat_m % K
        npair, nm = len(self._flat_p), len(self._flat_m)
        rows = np.concatenate([self._tp[self._flat_p], self._tm[self._flat_m],
                               K + self._tp[self._flat_p], K + self._tm[self._flat_m]])
        cols = np.arange(2 * (npair + nm))
        vals = np.concatenate([np.ones(npair + nm), self._sp[self._flat_p], self._sm[self._flat_m]])
        self._scatter = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * K, 2 * (npair + nm)))

    def zeros(self) -> np.ndarray:
        return np.zeros((self.size, 2, 3))

    def project(self, arr: np.ndarray) -> np.ndarray:
        return np.einsum("kij,...kcj->...kci", self._proj, arr)

    def bilinear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Galerkin B(a, b); leading batch axes are allowed and must match."""
        K = self.size
        batch = a.shape[:-3]
        a = a.reshape(-1, K, 2, 3)
        b = b.reshape(-1, K, 2, 3)
        nb = a.shape[0]
        C, D = b[:, :, 0], b[:, :, 1]
        ac = (a[:, :, 0] @ self._kf.T).reshape(nb, -1)
        as_ = (a[:, :, 1] @ self._kf.T).reshape(nb, -1)
        fp, fm, jp, jm = self._flat_p, self._flat_m, self._jp, self._jm
        acp, asp = ac[:, fp, None], as_[:, fp, None]
        acm, asm = ac[:, fm, None], as_[:, fm, None]
        Cp, Dp, Cm, Dm = C[:, jp], D[:, jp], C[:, jm], D[:, jm]
        stacked = np.concatenate([acp * Dp + asp * Cp, acm * Dm - asm * Cm,
                                  asp * Dp - acp * Cp, acm * Cm + asm * Dm], axis=1)
        if nb == 1:
            out = (self._scatter @ stacked[0]).reshape(1, 2, K, 3)
        else:
            flat = stacked.transpose(1, 0, 2).reshape(stacked.shape[1], nb * 3)
            out = (self._scatter @ flat).reshape(2, K, nb, 3).transpose(2, 0, 1, 3)
        out = out.transpose(0, 2, 1, 3)
        return 0.5 * self.project(out).reshape(batch + (K, 2, 3))

    def quadratic(self, u: np.ndarray) -> np.ndarray:
        return self.bilinear(u, u)

    def stokes(self, u: np.ndarray) -> np.ndarray:
        return u * self.k2[:, None, None]

    def norm(self, u: np.ndarray, k: float = 0.0) -> float:
        w = self.k2 ** k
        return float(np.sqrt(np.sum(w[:, None, None] * u * u)))

    def norms(self, U: np.ndarray, k: float = 0.0) -> np.ndarray:
        """Sobolev norms of a stack of states (..., K, 2, 3)."""
        w = (self.k2 ** k)[:, None, None]
        return np.sqrt(np.sum(w * U * U, axis=(-3, -2, -1)))

    def from_field(self, u: TrigField, strict: bool = True) -> np.ndarray:
        out = self.zeros()
        for k, c, s in zip(u.modes.tolist(), u.cos, u.sin):
            i = self.index.get(tuple(k))
            if i is None:
                if strict and (np.any(c != 0) or np.any(s != 0)):
                    raise ValueError(f"mode {tuple(k)} lies outside the mode table")
                continue
            out[i, 0] = c
            out[i, 1] = s
        return out

    def to_field(self, arr: np.ndarray, tol: float = 0.0) -> TrigField:
        arr = np.asarray(arr, float)
        keep = np.abs(arr).reshape(self.size, -1).max(axis=1) > tol
        return TrigField(self.modes[keep], arr[keep, 0], arr[keep, 1], check=False)

    def to_frame(self, arr: np.ndarray) -> np.ndarray:
        """Frame coordinates, shape (..., K, 4): (cos.l1, cos.l2, sin.l1, sin.l2)."""
        c = np.einsum("...kj,kfj->...kf", arr[..., 0, :], self.frames)
        s = np.einsum("...kj,kfj->...kf", arr[..., 1, :], self.frames)
        return np.concatenate([c, s], axis=-1)

    def from_frame(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, float)
        c = np.einsum("...kf,kfj->...kj", coords[..., 0:2], self.frames)
        s = np.einsum("...kf,kfj->...kj", coords[..., 2:4], self.frames)
        return np.stack([c, s], axis=-2)

    def evaluate(self, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
        phase = pts @ self._kf.T
        return np.cos(phase) @ arr[:, 0] + np.sin(phase) @ arr[:, 1]

    def gradient(self, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
        phase = pts @ self._kf.T
        cp, sp = np.cos(phase), np.sin(phase)
        # d u_i / d x_j = sum_k (-c_i sin + s_i cos) k_j
        wc = -sp[:, :, None] * arr[None, :, 0, :]
        ws = cp[:, :, None] * arr[None, :, 1, :]
        return np.einsum("pki,kj->pij", wc + ws, self._kf)
