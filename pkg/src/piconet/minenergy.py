"""Minimum average energy needed to support given arrival rates.

The per-slot problem is solved in the dual: for weights ``omega`` the
optimal stationary rule schedules the (sensor, mode) pair maximizing
``omega_k r_l - a_l / s_k``.  Dual weights are found by projected
subgradient steps (any K) or, for one sensor, by root-finding on the
closed-form rate ``C(omega)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelModel
from .numerics import find_root_monotone, rng_stream
from .phy import PhyModeSet, effective_rate_mu, upper_hull


class InfeasibleRateError(ValueError):
    """The requested rates lie outside the stability region."""


@dataclass(frozen=True)
class ThresholdRateTable:
    """Received-SNR thresholds ``a`` and rates ``r`` with ``r[0] = 0`` (NULL)."""

    a: np.ndarray
    r: np.ndarray
    modes: tuple[int, ...] = ()  # original mode index of each row

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if a.shape != r.shape or a.ndim != 1 or a.size < 2:
            raise ValueError("a and r must be 1-D with at least NULL and one mode")
        if r[0] != 0.0 or np.any(a < 0) or np.any(r < 0):
            raise ValueError("need r[0] = 0 and non-negative entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "r", r)
        if not self.modes:
            object.__setattr__(self, "modes", tuple(range(a.size)))

    @property
    def L(self) -> int:
        return self.a.size - 1

    def is_concave(self, rtol: float = 1e-12) -> bool:
        da, dr = np.diff(self.a), np.diff(self.r)
        if np.any(da < 0) or np.any(dr <= 0):
            return False
        # compare slopes dr/da without dividing (da may be zero)
        lhs = dr[1:] * da[:-1]
        rhs = dr[:-1] * da[1:]
        return bool(np.all(lhs <= rhs * (1 + rtol) + rtol))

    @classmethod
    def from_modes(cls, modes: PhyModeSet) -> "ThresholdRateTable":
        """Table of an indicator-PER mode set (thresholds and rates)."""
        a = [modes.snr0] + [m.threshold for m in modes.modes]
        return cls(np.array(a), modes.rates)


def prune_to_concave(table: ThresholdRateTable) -> ThresholdRateTable:
    """Keep the modes on the upper-left concave boundary of ``(a, r)``."""
    a, r = table.a, table.r
    rest = np.arange(1, a.size)
    order = rest[np.lexsort((-r[rest], a[rest]))]
    # drop modes dominated by a cheaper mode with at least the same rate
    keep = [0]
    best = 0.0
    for i in order:
        if r[i] > best:
            keep.append(int(i))
            best = r[i]
    idx = np.array(keep)
    hull = idx[upper_hull(a[idx], r[idx])]
    return ThresholdRateTable(a[hull], r[hull], tuple(table.modes[i] for i in hull))


@dataclass
class EnergyFunctionResult:
    value: float
    omega: np.ndarray
    thresholds: ThresholdRateTable
    rate_achieved: np.ndarray
    iterations: int
    converged: bool
    dual_value: float = math.nan
    trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class MonteCarloEstimate:
    gamma: float
    c: np.ndarray
    gamma_se: float
    c_se: np.ndarray


def _scores(omega, table, inv_s):
    # (..., K, L+1)
    return omega[:, None] * table.r[None, :] - inv_s[..., :, None] * table.a[None, :]


def decision_rule(omega, table: ThresholdRateTable, s) -> tuple[int, int]:
    """``argmax_{k,l} omega_k r_l - a_l / s_k``; ties to smaller k, then l."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    sc = _scores(omega, table, 1.0 / s)
    k, ell = divmod(int(np.argmax(sc.ravel())), table.L + 1)
    return k, ell


def decide_batch(omega, table: ThresholdRateTable, inv_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`decision_rule` over rows of ``inv_s = 1/s``."""
    sc = _scores(np.asarray(omega, dtype=float), table, inv_s)
    flat = np.argmax(sc.reshape(sc.shape[0], -1), axis=1)
    return np.divmod(flat, table.L + 1)


def draw_channel_batch(channel, K: int, n_samples: int, rng) -> np.ndarray:
    """``1/S`` samples of shape ``(n_samples, K)`` for reuse across calls."""
    return 1.0 / channel.sample(rng, K, n_samples)


def monte_carlo_gamma_c(
    omega,
    table: ThresholdRateTable,
    channel=None,
    K: int = 1,
    n_samples: int = 100_000,
    rng=None,
    inv_s: Optional[np.ndarray] = None,
) -> MonteCarloEstimate:
    """Sample averages of energy ``a_l/s_k`` and per-sensor rate under the rule."""
    if inv_s is None:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = rng if rng is not None else rng_stream(0)
        inv_s = draw_channel_batch(channel, K, n_samples, rng)
    n, K = inv_s.shape
    omega = np.broadcast_to(np.asarray(omega, dtype=float), (K,))
    k, ell = decide_batch(omega, table, inv_s)
    energy = table.a[ell] * inv_s[np.arange(n), k]
    rates = np.zeros((n, K))
    rates[np.arange(n), k] = table.r[ell]
    denom = math.sqrt(n)
    return MonteCarloEstimate(
        float(energy.mean()),
        rates.mean(axis=0),
        float(energy.std() / denom),
        rates.std(axis=0) / denom,
    )


def _as_rates(lam, K: int) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (K,)).copy()
    if np.any(lam < 0):
        raise ValueError("rates must be non-negative")
    return lam


def subgradient_solve(
    lam,
    table: ThresholdRateTable,
    channel=None,
    K: int = 1,
    eps0: Optional[float] = None,
    b: float = 10.0,
    max_iter: int = 2000,
    n_samples: int = 100_000,
    rng=None,
    inv_s: Optional[np.ndarray] = None,
    omega_max: float = 1e6,
    rate_tol: float = 1e-3,
    window: int = 50,
) -> EnergyFunctionResult:
    """Projected subgradient ascent on the dual with diminishing steps.

    ``rate_tol`` is relative to each ``lam_k``.  The reported value is the
    smallest energy among iterates meeting every rate constraint.
    """
    table = prune_to_concave(table)
    if inv_s is None:
        rng = rng if rng is not None else rng_stream(0)
        inv_s = draw_channel_batch(channel, K, n_samples, rng)
    K = inv_s.shape[1]
    lam = _as_rates(lam, K)
    r_max = float(table.r[-1])
    if lam.sum() >= r_max:
        raise InfeasibleRateError(f"total rate {lam.sum():.6g} >= peak service rate {r_max:.6g}")

    def evaluate(w):
        est = monte_carlo_gamma_c(w, table, inv_s=inv_s)
        return est.gamma, est.c

    if not np.any(lam > 0):
        g, c = evaluate(np.zeros(K))
        return EnergyFunctionResult(g, np.zeros(K), table, c, 0, True, g, [g])

    tol = rate_tol * lam

    # warm start: common weight t meeting the total rate
    def total_short(t):
        return lam.sum() - evaluate(np.full(K, t))[1].sum()

    hi = 1.0
    while total_short(hi) > 0:
        hi *= 2.0
        if hi > omega_max:
            raise InfeasibleRateError("rates not met for any common dual weight up to omega_max")
    lo = 0.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if total_short(mid) > 0:
            lo = mid
        else:
            hi = mid
    omega = np.full(K, hi)
    if eps0 is None:
        eps0 = 0.5 * max(hi, 1.0) / r_max

    best_val = math.inf
    best_omega = omega.copy()
    best_c = None
    best_dual = -math.inf
    trace: list[float] = []
    converged = False
    n = 0
    g, c = evaluate(omega)
    for n in range(1, max_iter + 1):
        trace.append(g)
        best_dual = max(best_dual, g - float(omega @ (c - lam)))
        feasible = bool(np.all(c >= lam - tol))
        if feasible and g < best_val:
            best_val, best_omega, best_c = g, omega.copy(), c.copy()
        if feasible and len(trace) >= window:
            recent = trace[-window:]
            if max(recent) - min(recent) <= 1e-3 * abs(np.mean(recent)):
                converged = True
                break
        step = eps0 * (1.0 + b) / (n + b)
        omega = np.maximum(omega + step * (lam - c), 0.0)
        if np.any(omega > omega_max):
            raise InfeasibleRateError("dual weights exceeded omega_max without meeting the rates")
        g, c = evaluate(omega)

    if best_c is None:
        return EnergyFunctionResult(g, omega, table, c, n, False, best_dual, trace)
    return EnergyFunctionResult(best_val, best_omega, table, best_c, n, converged, best_dual, trace)


def single_sensor_breakpoints(omega: float, table: ThresholdRateTable) -> np.ndarray:
    """Channel gains ``s_0=0 <= s_1 <= ... <= s_L < s_{L+1}=inf`` where the mode switches."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    if not table.is_concave():
        raise ValueError("table must be concave; call prune_to_concave first")
    inner = np.diff(table.a) / (omega * np.diff(table.r))
    return np.concatenate([[0.0], inner, [math.inf]])


def single_sensor_gamma_c(omega: float, table: ThresholdRateTable, channel) -> tuple[float, float]:
    """Exact ``(Gamma, C)`` for one sensor by integrating over the decision regions."""
    if omega == 0:
        return table.a[0] * channel.mean_inverse_gain(), 0.0
    s = single_sensor_breakpoints(omega, table)
    gamma = 0.0
    c = 0.0
    for ell in range(table.L + 1):
        lo, hi = s[ell], s[ell + 1]
        if hi <= lo:
            continue
        if table.a[ell] > 0:
            gamma += table.a[ell] * channel.expect(lambda x: 1.0 / x, lo, hi)
        if table.r[ell] > 0:
            c += table.r[ell] * channel.prob(lo, hi)
    return gamma, c


def _single_sensor_rate(omega: float, table: ThresholdRateTable, channel) -> float:
    if omega == 0:
        return 0.0
    s = single_sensor_breakpoints(omega, table)[1:-1]
    # C = sum_l (r_l - r_{l-1}) P(S >= s_l)
    tail = np.array([channel.prob(x) for x in s])
    return float(np.diff(table.r) @ tail)


def solve_lambda(lam: float, table: ThresholdRateTable, channel) -> EnergyFunctionResult:
    """One sensor: find ``omega`` with ``C(omega) = lam`` and return ``Gamma(omega)``."""
    table = prune_to_concave(table)
    lam = float(lam)
    if lam < 0:
        raise ValueError("rate must be non-negative")
    if lam >= table.r[-1]:
        raise InfeasibleRateError(f"rate {lam} >= peak service rate {table.r[-1]}")
    if lam == 0:
        g, c = single_sensor_gamma_c(0.0, table, channel)
        return EnergyFunctionResult(g, np.zeros(1), table, np.array([c]), 0, True, g)

    def short(w):
        return _single_sensor_rate(w, table, channel) - lam

    hi = 1.0
    n = 0
    while short(hi) < 0:
        hi *= 2.0
        n += 1
        if hi > 1e12:
            raise InfeasibleRateError("rate not reached for any dual weight")
    omega = find_root_monotone(short, 0.0, hi, tol=1e-12 * max(1.0, lam))
    g, c = single_sensor_gamma_c(omega, table, channel)
    return EnergyFunctionResult(g, np.array([omega]), table, np.array([c]), n, True, g + omega * (lam - c))


def two_mass_allocation(table: ThresholdRateTable, rate: float) -> tuple[np.ndarray, float]:
    """Cheapest mode mixture reaching ``rate`` on a concave table.

    Returns the mixing probabilities (mass on at most two consecutive
    modes) and the resulting threshold cost ``sum p_l a_l``.
    """
    if not table.is_concave():
        raise ValueError("table must be concave")
    if not 0 <= rate <= table.r[-1]:
        raise ValueError("rate outside [0, r_L]")
    p = np.zeros(table.L + 1)
    j = int(np.searchsorted(table.r, rate, side="left"))
    if table.r[j] == rate:
        p[j] = 1.0
    else:
        w = (rate - table.r[j - 1]) / (table.r[j] - table.r[j - 1])
        p[j - 1], p[j] = 1.0 - w, w
    return p, float(p @ table.a)


def waterfall_limits(modes: PhyModeSet, p_lo: float = 0.1, p_hi: float = 0.99) -> list[tuple[float, float]]:
    return [(modes.waterfall(ell, p_lo), modes.waterfall(ell, p_hi)) for ell in range(1, modes.L + 1)]


def table_at(modes: PhyModeSet, thresholds: Sequence[float]) -> ThresholdRateTable:
    """Transmit at received SNR ``a_l`` in mode l: rate ``R_l P_l(a_l)``."""
    a = np.array([modes.snr0] + list(thresholds), dtype=float)
    r = np.array([0.0] + [modes.rates[ell] * modes.success(ell, a[ell]) for ell in range(1, modes.L + 1)])
    return ThresholdRateTable(a, r)


def _solve(lam, table, channel, K, method, inv_s, **kw) -> EnergyFunctionResult:
    if method == "auto":
        method = "closed_form" if K == 1 and isinstance(channel, ChannelModel) else "subgradient"
    if method == "closed_form":
        if K != 1:
            raise ValueError("closed form applies to a single sensor only")
        return solve_lambda(float(np.asarray(lam).ravel()[0]), table, channel)
    if method == "subgradient":
        return subgradient_solve(lam, table, channel, K, inv_s=inv_s, **kw)
    raise ValueError(f"unknown method {method!r}")


def phi_upper_unoptimized(lam, modes: PhyModeSet, channel, K: int = 1, method: str = "auto",
                          seed: int = 0, n_samples: int = 100_000, **kw) -> EnergyFunctionResult:
    """Upper bound with every mode run at its ``P = 0.99`` SNR."""
    a = [hi for _, hi in waterfall_limits(modes)]
    inv_s = draw_channel_batch(channel, K, n_samples, rng_stream(seed, 1))
    return _solve(lam, table_at(modes, a), channel, K, method, inv_s, **kw)


def phi_upper(
    lam,
    modes: PhyModeSet,
    channel,
    K: int = 1,
    grid_per_dim: int = 15,
    method: str = "auto",
    seed: int = 0,
    n_samples: int = 100_000,
    n_refine: int = 5,
    **kw,
) -> EnergyFunctionResult:
    """Achievable energy: best operating SNRs over the waterfall box.

    Each mode's SNR ranges over a log grid between its ``P = 0.1`` and
    ``P = 0.99`` points.  With one sensor every candidate is solved in
    closed form.  Otherwise candidates are ranked by the single-sensor
    closed form at the total rate and the ``n_refine`` best (plus the
    ``P = 0.99`` corner) are solved by subgradient on one shared sample
    batch.
    """
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be >= 2")
    lam = _as_rates(lam, K)
    limits = waterfall_limits(modes)
    grids = [np.geomspace(lo, hi, grid_per_dim) for lo, hi in limits]
    candidates = [table_at(modes, a) for a in itertools.product(*grids)]
    closed = method == "closed_form" or (method == "auto" and K == 1 and isinstance(channel, ChannelModel))

    def screen(table):
        try:
            return solve_lambda(lam.sum(), table, channel).value
        except InfeasibleRateError:
            return math.inf

    if closed:
        results = []
        for table in candidates:
            try:
                results.append(solve_lambda(lam.sum(), table, channel))
            except InfeasibleRateError:
                pass
        if not results:
            raise InfeasibleRateError("no candidate operating point supports the rate")
        return min(results, key=lambda res: res.value)

    scored = sorted(range(len(candidates)), key=lambda i: screen(candidates[i]))
    chosen = scored[:n_refine] + [len(candidates) - 1]  # last = P=0.99 corner
    inv_s = draw_channel_batch(channel, K, n_samples, rng_stream(seed, 1))
    best = None
    for i in dict.fromkeys(chosen):
        try:
            res = subgradient_solve(lam, candidates[i], channel, K, inv_s=inv_s, **kw)
        except InfeasibleRateError:
            continue
        if best is None or res.value < best.value:
            best = res
    if best is None:
        raise InfeasibleRateError("no candidate operating point supports the rates")
    return best


def default_snr_grid(modes: PhyModeSet, n: int = 4096, p_top: float = 0.9999) -> np.ndarray:
    top = max(modes.waterfall(ell, p_top) for ell in range(1, modes.L + 1))
    lo = modes.snr0 if modes.snr0 > 0 else top * 1e-6
    grid = np.geomspace(lo, top, n)
    return np.unique(np.concatenate([grid, modes.breakpoints()]))


def build_mu_tilde(modes: PhyModeSet, snr_grid: Optional[np.ndarray] = None,
                   gap_tol: float = 1e-2) -> ThresholdRateTable:
    """Concave piecewise-linear majorant of the goodput curve.

    From ``(a_l, R_l)`` the flattest line lying above the goodput on the
    grid is extended to height ``R_{l+1}``, which fixes ``a_{l+1}``.
    """
    x = np.asarray(snr_grid if snr_grid is not None else default_snr_grid(modes), dtype=float)
    x = np.sort(x[x >= modes.snr0])
    mu, _ = effective_rate_mu(modes, x)
    rates = modes.rates
    a = [modes.snr0]
    for ell in range(modes.L):
        a0, r0 = a[-1], rates[ell]
        ahead = x > a0
        slopes = (mu[ahead] - r0) / (x[ahead] - a0)
        i = int(np.argmax(slopes))
        m = float(slopes[i])
        if not m > 0:
            raise ValueError("goodput never exceeds the current rate on the grid")
        xs = x[ahead]
        if 0 < i < xs.size - 1 and (xs[i + 1] - xs[i - 1]) / xs[i] > gap_tol:
            warnings.warn("snr grid may be too coarse to resolve a tangency point", RuntimeWarning)
        a.append(a0 + (rates[ell + 1] - r0) / m)
    return ThresholdRateTable(np.array(a), rates)


def phi_lower(lam, modes: PhyModeSet, channel, K: int = 1, method: str = "auto",
              seed: int = 0, n_samples: int = 100_000, snr_grid=None, **kw) -> EnergyFunctionResult:
    """Energy with the goodput replaced by its concave majorant (a lower bound)."""
    table = prune_to_concave(build_mu_tilde(modes, snr_grid))
    inv_s = None
    if not (method == "closed_form" or (method == "auto" and K == 1 and isinstance(channel, ChannelModel))):
        inv_s = draw_channel_batch(channel, K, n_samples, rng_stream(seed, 1))
    return _solve(lam, table, channel, K, method, inv_s, **kw)
