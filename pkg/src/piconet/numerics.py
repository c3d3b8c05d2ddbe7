"""Special functions, seeded random streams and 1-D search helpers."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import special

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateIntervalError(ValueError):
    """Search interval narrower than the requested tolerance."""


class NoBracketError(ValueError):
    """Function values at both ends of the interval have the same sign."""


def gaussian_q(x):
    """Tail probability P(Z > x) of a standard normal variable."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero."""
    out = special.i0(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def bessel_i0e(x):
    """Exponentially scaled ``exp(-x) * I0(x)``; finite for any x >= 0."""
    out = special.i0e(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def _marcum_terms(ratio: np.ndarray, x: np.ndarray) -> int:
    # Terms (ratio**k) * ive(k, x) fall below 1e-18 once both the geometric
    # factor and the Bessel ratio I_k/I_0 ~ exp(-k^2 / 2x) are exhausted.
    rmax = float(np.max(ratio, initial=0.0))
    xmax = float(np.max(x, initial=0.0))
    n_bessel = 40 + int(12.0 * math.sqrt(xmax))
    if rmax < 1.0 - 1e-12:
        n_geom = 40 + int(math.log(1e-18) / math.log(max(rmax, 1e-300)))
        return max(2, min(n_bessel, n_geom))
    return n_bessel


def marcum_q1(a, b):
    """First-order Marcum Q function Q1(a, b).

    Uses the Neumann series in scaled Bessel functions: for ``a < b``
    ``Q1 = exp(-(a-b)^2/2) * sum_{k>=0} (a/b)^k ive(k, ab)`` and for
    ``a >= b`` the complementary series in ``b/a``.  All terms are positive,
    so there is no cancellation.
    """
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise ValueError("marcum_q1 requires a, b >= 0")
    a_flat = a_arr.ravel()
    b_flat = b_arr.ravel()
    out = np.empty_like(a_flat)

    zero_b = b_flat == 0.0
    out[zero_b] = 1.0
    zero_a = (a_flat == 0.0) & ~zero_b
    out[zero_a] = np.exp(-0.5 * b_flat[zero_a] ** 2)

    rest = ~(zero_a | zero_b)
    if np.any(rest):
        aa = a_flat[rest]
        bb = b_flat[rest]
        x = aa * bb
        scale = np.exp(-0.5 * (aa - bb) ** 2)
        lower = aa < bb
        ratio = np.where(lower, aa / bb, bb / aa)
        n = _marcum_terms(ratio, x)
        k = np.arange(n, dtype=float)
        terms = special.ive(k[None, :], x[:, None]) * ratio[:, None] ** k[None, :]
        series_lower = terms.sum(axis=1)
        series_upper = terms[:, 1:].sum(axis=1)
        val = np.where(lower, scale * series_lower, 1.0 - scale * series_upper)
        out[rest] = val
    out = np.clip(out, 0.0, 1.0).reshape(a_arr.shape)
    return float(out) if out.ndim == 0 else out


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for ``(seed, key...)``.

    Streams with distinct keys come from ``SeedSequence`` spawning and do not
    overlap in practice; equal arguments always give the same draws.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def minimize_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-8,
    n_grid: int = 64,
) -> tuple[float, float]:
    """Global-ish minimizer of ``f`` on ``[lo, hi]``.

    A uniform coarse grid picks the best basin (ties go to the lowest
    abscissa), then golden-section search refines inside the two grid cells
    around it.  Returns ``(argmin, min)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not hi - lo >= tol:
        raise DegenerateIntervalError(f"interval [{lo}, {hi}] narrower than tol={tol}")
    n_grid = max(int(n_grid), 64)
    xs = np.linspace(lo, hi, n_grid)
    fs = np.array([f(float(x)) for x in xs])
    i = int(np.argmin(fs))
    best_x, best_f = float(xs[i]), float(fs[i])

    left = float(xs[max(i - 1, 0)])
    right = float(xs[min(i + 1, n_grid - 1)])
    c = right - _GOLDEN * (right - left)
    d = left + _GOLDEN * (right - left)
    fc, fd = f(c), f(d)
    while right - left > tol:
        if fc <= fd:
            right, d, fd = d, c, fc
            c = right - _GOLDEN * (right - left)
            fc = f(c)
        else:
            left, c, fc = c, d, fd
            d = left + _GOLDEN * (right - left)
            fd = f(d)
    x_ref = 0.5 * (left + right)
    f_ref = f(x_ref)
    if f_ref < best_f:
        best_x, best_f = x_ref, f_ref
    return best_x, best_f


def find_root_monotone(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Bisection root of a monotone function bracketed by ``[lo, hi]``.

    Stops when ``|f(mid)| <= tol`` or the bracket is narrower than ``tol``.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if (flo > 0) == (fhi > 0):
        raise NoBracketError(f"f({lo})={flo} and f({hi})={fhi} do not bracket a root")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or hi - lo <= tol:
            break
        if (fm > 0) == (fhi > 0):
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return float(mid)
