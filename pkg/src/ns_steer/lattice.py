"""Integer-lattice algebra on Z^3: frames, generator test, span membership and the mode ladder."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Triple = tuple[int, int, int]


def _as_triple(v: Iterable[int]) -> Triple:
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected an integer 3-vector, got {t!r}")
    return t  # type: ignore[return-value]


def is_canonical(ell: Sequence[int]) -> bool:
    """True when ell is the lexicographically larger member of {ell, -ell}."""
    for x in ell:
        if x != 0:
            return x > 0
    return False


def canonical(ell: Sequence[int]) -> Triple:
    t = _as_triple(ell)
    if is_canonical(t):
        return t
    return (-t[0], -t[1], -t[2])


def mode_frame(ell: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal pair (l(ell), l(-ell)) spanning the plane orthogonal to ell.

    The first vector is the coordinate axis least aligned with ell, made
    orthogonal to ell and normalised; the second is ell/|ell| x first.
    """
    v = np.array(_as_triple(ell), dtype=float)
    n2 = float(v @ v)
    if n2 == 0.0:
        raise ValueError("the zero mode has no frame")
    axis = int(np.argmin(np.abs(v)))
    e = np.zeros(3)
    e[axis] = 1.0
    first = e - (v[axis] / n2) * v
    first /= np.linalg.norm(first)
    second = np.cross(v / math.sqrt(n2), first)
    second /= np.linalg.norm(second)
    return first, second


@dataclass(frozen=True)
class LatticeMode:
    """A nonzero wavevector with its deterministic frame of the orthogonal plane."""

    ell: Triple
    frame: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        t = _as_triple(self.ell)
        object.__setattr__(self, "ell", t)
        f1, f2 = mode_frame(t)
        f1.setflags(write=False)
        f2.setflags(write=False)
        object.__setattr__(self, "frame", (f1, f2))

    @property
    def norm2(self) -> int:
        return sum(x * x for x in self.ell)


class LatticeSet:
    """Finite set of integer 3-vectors, deduplicated and iterated in lexicographic order."""

    __slots__ = ("_modes",)

    def __init__(self, modes: Iterable[Iterable[int]] = ()) -> None:
        self._modes: tuple[Triple, ...] = tuple(sorted({_as_triple(m) for m in modes}))

    @property
    def modes(self) -> tuple[Triple, ...]:
        return self._modes

    def __iter__(self):
        return iter(self._modes)

    def __len__(self) -> int:
        return len(self._modes)

    def __contains__(self, item) -> bool:
        return _as_triple(item) in set(self._modes)

    def __eq__(self, other) -> bool:
        if isinstance(other, LatticeSet):
            return self._modes == other._modes
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._modes)

    def __repr__(self) -> str:
        return f"LatticeSet({list(self._modes)})"

    def to_json(self) -> list[list[int]]:
        return [list(m) for m in self._modes]

    @classmethod
    def from_json(cls, data) -> "LatticeSet":
        if not isinstance(data, list):
            raise ValueError("a lattice set is a JSON array of integer triples")
        out = []
        for i, item in enumerate(data):
            if not isinstance(item, list) or len(item) != 3 or not all(isinstance(x, int) for x in item):
                raise ValueError(f"[{i}]: expected an integer triple, got {item!r}")
            out.append(item)
        return cls(out)


def _det3(a: Triple, b: Triple, c: Triple) -> int:
    return (a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))


def determinant_gcd(K: LatticeSet | Iterable[Iterable[int]]) -> int:
    """gcd of |det(a,b,c)| over all triples of K; 0 for an empty or degenerate set."""
    modes = list(LatticeSet(K)) if not isinstance(K, LatticeSet) else list(K)
    g = 0
    for a, b, c in itertools.combinations(modes, 3):
        g = math.gcd(g, abs(_det3(a, b, c)))
        if g == 1:
            break
    return g


def is_generator(K: LatticeSet | Iterable[Iterable[int]]) -> bool:
    return determinant_gcd(K) == 1


def hermite_normal_form(rows: Sequence[Sequence[int]]) -> list[list[int]]:
    """Row-style Hermite normal form of an integer matrix with 3 columns.

    Returns the nonzero rows; pivots move strictly right, are positive,
    and entries above a pivot are reduced into [0, pivot).
    """
    A = [list(map(int, r)) for r in rows if any(r)]
    ncols = 3
    r = 0
    for col in range(ncols):
        if r >= len(A):
            break
        while True:
            nz = [i for i in range(r, len(A)) if A[i][col] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(A[i][col]))
            A[r], A[piv] = A[piv], A[r]
            done = True
            for i in range(r + 1, len(A)):
                if A[i][col]:
                    q = A[i][col] // A[r][col]
                    A[i] = [x - q * y for x, y in zip(A[i], A[r])]
                    if A[i][col]:
                        done = False
            if done:
                break
        if r < len(A) and A[r][col] != 0:
            if A[r][col] < 0:
                A[r] = [-x for x in A[r]]
            for i in range(r):
                q = A[i][col] // A[r][col]
                A[i] = [x - q * y for x, y in zip(A[i], A[r])]
            r += 1
    return [row for row in A[:r] if any(row)]


def integer_span_membership(K: LatticeSet | Iterable[Iterable[int]], a: Sequence[int]) -> bool:
    """True iff a is an integer combination of the vectors in K."""
    target = list(_as_triple(a))
    H = hermite_normal_form(list(K))
    for row in H:
        col = next(i for i, x in enumerate(row) if x != 0)
        if target[col] % row[col]:
            return False
        q = target[col] // row[col]
        target = [x - q * y for x, y in zip(target, row)]
    return not any(target)


def _parallel(m: Triple, n: Triple) -> bool:
    return (m[1] * n[2] - m[2] * n[1] == 0
            and m[2] * n[0] - m[0] * n[2] == 0
            and m[0] * n[1] - m[1] * n[0] == 0)


def ladder_step(K: LatticeSet, radius: int | None = None) -> LatticeSet:
    """One rung: K plus m +/- n over ordered non-parallel pairs, optionally pruned to |l|_inf <= radius."""
    modes = list(K)
    new = set(modes)
    for i, m in enumerate(modes):
        for n in modes[i + 1:]:
            if _parallel(m, n):
                continue
            new.add((m[0] + n[0], m[1] + n[1], m[2] + n[2]))
            new.add((m[0] - n[0], m[1] - n[1], m[2] - n[2]))
            new.add((n[0] - m[0], n[1] - m[1], n[2] - m[2]))
    if radius is not None:
        new = {v for v in new if max(abs(x) for x in v) <= radius}
    new.discard((0, 0, 0))
    return LatticeSet(new)


def grow_ladder(K: LatticeSet | Iterable[Iterable[int]], j: int, radius: int | None = None) -> LatticeSet:
    """K_j with K_0 = K and K_j = K_{j-1} + {m +/- n : m, n in K_{j-1}, m not parallel to n}.

    ``radius`` prunes every rung to |l|_inf <= radius; the pruned ladder is a
    subset of the exact one, so coverage proved with pruning holds without it.
    """
    if j < 0:
        raise ValueError("ladder depth must be nonnegative")
    cur = K if isinstance(K, LatticeSet) else LatticeSet(K)
    for _ in range(j):
        nxt = ladder_step(cur, radius)
        if nxt == cur:
            break
        cur = nxt
    return cur


def box_modes(radius: int) -> list[Triple]:
    """All nonzero integer vectors with max-norm at most radius, lexicographic order."""
    r = range(-radius, radius + 1)
    return [v for v in itertools.product(r, r, r) if v != (0, 0, 0)]


def canonical_box(radius: int) -> list[Triple]:
    return [v for v in box_modes(radius) if is_canonical(v)]
