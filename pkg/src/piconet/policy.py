"""Per-slot scheduling: drift-plus-penalty polling, round robin and sleep switching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .numerics import minimize_scalar
from .phy import GoodputTable, PhyModeSet, effective_rate_mu

DEFAULT_P_MAX = 1e4


@dataclass(frozen=True)
class SchedulerConfig:
    V: float
    P_max: float
    A_max: float
    delta_max: float
    nu: float
    zeta: float
    q_th: float


def derive_constants(V: float, A_max: float, modes: PhyModeSet, P_max: float = DEFAULT_P_MAX,
                     s_min: Optional[float] = None) -> SchedulerConfig:
    """Threshold, bias and exponent constants of the scheduler for control parameter ``V``."""
    if not V > 1:
        raise ValueError("V must exceed 1 so that the queue threshold is positive")
    if A_max < 0:
        raise ValueError("A_max must be non-negative")
    if s_min is not None and P_max * s_min < modes.snr0:
        raise ValueError("P_max * s_min must reach snr0")
    delta = max(A_max, modes.max_rate)
    nu = 1.0 / math.sqrt(V)
    zeta = nu / delta**2 * math.exp(-nu / delta)
    q_th = 6.0 / zeta * math.log(1.0 / nu)
    return SchedulerConfig(float(V), float(P_max), float(A_max), delta, nu, zeta, q_th)


def weight(Q: float, X: float, config: SchedulerConfig) -> float:
    """Scheduler weight; the exponent is clamped at 700 (see :func:`weight_saturated`)."""
    return _kernel.weight_nb(float(Q), float(X), config.zeta, config.q_th)[0]


def weight_saturated(Q: float, config: SchedulerConfig) -> bool:
    return bool(_kernel.weight_nb(float(Q), 0.0, config.zeta, config.q_th)[1])


def update_aux_queue(X: float, served_rate: float, Q: float, A: float, config: SchedulerConfig) -> float:
    return _kernel.aux_update_nb(float(X), float(served_rate), float(Q), float(A), config.nu, config.q_th)


def queue_update(Q: float, served: float, A: float) -> float:
    """Real queue after serving ``served`` bits and adding arrivals ``A``."""
    return max(Q - served, 0.0) + A


def energy_opt(W: float, S: float, config: SchedulerConfig, modes: PhyModeSet,
               thresholds: Optional[Sequence[float]] = None, n_grid: int = 512) -> tuple[float, int]:
    """Energy minimizing ``V e - [W]+ mu(e S)`` on ``[snr0/S, P_max]`` and its mode.

    Each payload mode is searched over log-energy (the waterfall is narrow
    compared with the interval); candidate energies ``a_l / S`` are added
    when ``thresholds`` are given.
    """
    e_lo = modes.snr0 / S if modes.snr0 > 0 else 1e-12
    if e_lo > config.P_max:
        raise ValueError("snr0 / S exceeds P_max")
    if W <= 0:
        return modes.snr0 / S, 0

    def total(e):
        return config.V * e - W * effective_rate_mu(modes, e * S)[0]

    candidates = [e_lo]
    u_lo, u_hi = math.log(e_lo), math.log(config.P_max)
    if u_hi - u_lo > 1e-9:
        for ell in range(1, modes.L + 1):
            rate = modes.rates[ell]

            def per_mode(u, rate=rate, ell=ell):
                e = math.exp(u)
                return config.V * e - W * rate * float(modes.success(ell, e * S))

            u, _ = minimize_scalar(per_mode, u_lo, u_hi, tol=1e-9, n_grid=n_grid)
            candidates.append(math.exp(u))
    if thresholds is not None:
        candidates += [a / S for a in thresholds if e_lo <= a / S <= config.P_max]
    vals = [total(e) for e in candidates]
    best = int(np.argmin(vals))
    e = candidates[best]
    return e, int(effective_rate_mu(modes, e * S)[1])


@dataclass
class SchedulerState:
    Q: np.ndarray
    X: np.ndarray
    asleep: np.ndarray
    t0_last_arrival: int = -1
    last_arrival: np.ndarray = field(default=None)
    t: int = 0

    @classmethod
    def initial(cls, K: int) -> "SchedulerState":
        return cls(np.zeros(K), np.zeros(K), np.zeros(K, dtype=bool), -1, np.full(K, -1, dtype=np.int64))

    @property
    def K(self) -> int:
        return self.Q.size


@dataclass(frozen=True)
class SlotDecision:
    k: int  # -1 when nobody is polled
    mode: int
    energy: float
    is_null: bool
    grid_index: int = 0
    goodput: float = 0.0
    reconnect_charges: tuple = ()


def _decision(k, j, S, W, table: GoodputTable) -> SlotDecision:
    energy = float(table.x[j] / S[k])
    if W[k] > 0:
        ell, goodput = int(table.mode[j]), float(table.mu[j])
    else:
        ell, goodput = 0, 0.0
    return SlotDecision(k, ell, energy, ell == 0, int(j), goodput)


def schedule_slot(state: SchedulerState, S, config: SchedulerConfig, table: GoodputTable) -> SlotDecision:
    """Poll the connected sensor with the smallest ``V e - [W]+ mu`` (ties: smaller k)."""
    W = [weight(q, x, config) for q, x in zip(state.Q, state.X)]
    best, k_sel, j_sel = math.inf, -1, 0
    for k in range(state.K):
        if state.asleep[k]:
            continue
        j = _kernel.choose_energy_nb(W[k], S[k], config.V, config.P_max, table.x, table.mu, table.hull, table.hull_slopes)
        obj = config.V * (table.x[j] / S[k])
        if W[k] > 0:
            obj -= W[k] * table.mu[j]
        if obj < best:
            best, k_sel, j_sel = obj, k, j
    if k_sel < 0:
        return SlotDecision(-1, 0, 0.0, False)
    return _decision(k_sel, j_sel, S, W, table)


def round_robin_slot(state: SchedulerState, S, config: SchedulerConfig, table: GoodputTable) -> SlotDecision:
    """Poll sensor ``t mod K`` with its own single-sensor energy choice."""
    k = state.t % state.K
    if state.asleep[k]:
        return SlotDecision(-1, 0, 0.0, False)
    W = [weight(q, x, config) for q, x in zip(state.Q, state.X)]
    j = _kernel.choose_energy_nb(W[k], S[k], config.V, config.P_max, table.x, table.mu, table.hull, table.hull_slopes)
    return _decision(k, j, S, W, table)


@dataclass(frozen=True)
class ArrivalLaw:
    """Per-sensor arrival statistics assumed known by the switching rule."""

    kind: str  # "deterministic" | "geometric"
    rate: float
    period: int = 1
    q: float = 1.0
    phase: int = 0

    def __post_init__(self):
        if self.kind not in ("deterministic", "geometric"):
            raise ValueError(f"unknown arrival kind {self.kind!r}")
        if self.rate < 0:
            raise ValueError("arrival rate must be non-negative")
        if self.kind == "deterministic" and self.period < 1:
            raise ValueError("period must be >= 1")
        if self.kind == "geometric" and not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")

    @property
    def size(self) -> float:
        return self.rate * self.period if self.kind == "deterministic" else self.rate / self.q

    def remaining_idle(self, t: int, last_arrival: int) -> float:
        """Expected idle slots still ahead after slot ``t`` before the next arrival."""
        if self.kind == "deterministic":
            return float(self.period - (t - last_arrival))
        return 1.0 / self.q


def sleep_check(state: SchedulerState, W, arrivals: Sequence[ArrivalLaw], tau: float,
                any_arrival: bool) -> list[int]:
    """Sensors that switch to sleep at the end of the current slot.

    Applies only to slots with no arrival in which every connected sensor has
    a non-positive weight.  A sensor sleeps when its expected remaining idle
    time exceeds ``tau`` times the number of sensors connected at the check.
    """
    connected = [k for k in range(state.K) if not state.asleep[k]]
    if any_arrival or not connected or any(W[k] > 0 for k in connected):
        return []
    limit = tau * len(connected)
    return [k for k in connected if arrivals[k].remaining_idle(state.t, int(state.last_arrival[k])) > limit]


def wake_up(state: SchedulerState, k: int, tau: float, e_null: float) -> float:
    """Reconnect sensor ``k`` and return the charged energy ``tau * E_null``."""
    if not state.asleep[k]:
        return 0.0
    state.asleep[k] = False
    return tau * e_null
