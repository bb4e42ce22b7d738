"""Independent reference computations used only by the tests."""

import numpy as np

from ns_steer.fourier import TrigField


def grid_points(n):
    x = 2 * np.pi * np.arange(n) / n
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
    return X


def _spectrum(u: TrigField, n: int) -> np.ndarray:
    """Complex FFT coefficients (n, n, n, 3) of u; c cos + s sin = Re[(c - i s) e^(i l.x)]."""
    F = np.zeros((n, n, n, 3), complex)
    for ell, c, s in zip(u.modes.tolist(), u.cos, u.sin):
        i, j, k = ell
        F[i % n, j % n, k % n] += 0.5 * (c - 1j * s)
        F[-i % n, -j % n, -k % n] += 0.5 * (c + 1j * s)
    return F


def pseudo_spectral_B(a: TrigField, b: TrigField, n: int = 16) -> dict:
    """<a,grad>b sampled on an n^3 grid, transformed, Leray-projected mode by mode.

    Grid values come from inverse FFTs of the coefficients, so nothing here
    reuses the package's coefficient arithmetic.  Returns {canonical mode:
    (cos, sin)} for every mode the grid resolves.
    """
    freq = np.fft.fftfreq(n, 1.0 / n)
    K = np.stack(np.meshgrid(freq, freq, freq, indexing="ij"), axis=-1)
    Fa, Fb = _spectrum(a, n), _spectrum(b, n)
    av = np.fft.ifftn(Fa, axes=(0, 1, 2)).real * n**3
    # gb[..., i, j] = d b_i / d x_j
    gb = np.fft.ifftn(1j * Fb[..., :, None] * K[..., None, :], axes=(0, 1, 2)).real * n**3
    f = np.einsum("...ij,...j->...i", gb, av)
    F = np.fft.fftn(f, axes=(0, 1, 2)) / n**3
    half = n // 2
    r = np.arange(-half + 1, half)
    L = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    nz = L != 0
    first = np.where(nz.any(axis=1), L[np.arange(len(L)), nz.argmax(axis=1)], 0)
    L = L[first > 0]
    Fk = F[L[:, 0] % n, L[:, 1] % n, L[:, 2] % n]
    kv = L.astype(float)
    k2 = np.sum(kv * kv, axis=1, keepdims=True)
    c = 2 * Fk.real
    s = -2 * Fk.imag
    c = c - np.sum(c * kv, axis=1, keepdims=True) / k2 * kv
    s = s - np.sum(s * kv, axis=1, keepdims=True) / k2 * kv
    return {tuple(int(x) for x in ell): (c[i], s[i]) for i, ell in enumerate(L)}

def brute_force_gcd(K):
    import itertools
    import math
    g = 0
    for a, b, c in itertools.combinations(list(K), 3):
        g = math.gcd(g, abs(int(round(np.linalg.det(np.array([a, b, c], float))))))
    return g
