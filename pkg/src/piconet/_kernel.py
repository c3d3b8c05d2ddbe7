"""Compiled per-slot loop used by the simulator.

Every primitive here is also called from the pure-Python reference path in
``policy``/``sim`` so both paths share arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EXP_CLAMP = 700.0

POLICY_OPPORTUNISTIC = 0
POLICY_ROUND_ROBIN = 1

ARRIVAL_DETERMINISTIC = 0
ARRIVAL_GEOMETRIC = 1

# accumulator slots
ACC_ENERGY = 0
ACC_NULL = 1
ACC_RECONNECT = 2
ACC_SLOTS = 3
ACC_SATURATED = 4
ACC_MAXQ_TAIL = 5
ACC_IDLE_SLOTS = 6
N_ACC = 7


@njit(cache=True)
def weight_nb(q, x, zeta, q_th):
    """Scheduler weight and whether the exponent had to be clamped."""
    if q >= q_th:
        z = zeta * (q - q_th)
        sat = z > EXP_CLAMP
        if sat:
            z = EXP_CLAMP
        return zeta * math.exp(z) + 2.0 * x, sat
    z = -zeta * (q - q_th)
    sat = z > EXP_CLAMP
    if sat:
        z = EXP_CLAMP
    return -zeta * math.exp(z) + 2.0 * x, sat


@njit(cache=True)
def aux_update_nb(x, served, q, a, nu, q_th):
    if q < q_th:
        return max(x - served - nu, 0.0) + a
    return max(x - served, 0.0) + a + nu


@njit(cache=True)
def best_index_nb(c, x_max, xs, mu, hull, hull_slopes):
    """Grid index minimizing ``c*x - mu`` over ``x <= x_max`` (ties: smaller x)."""
    lo = 0
    hi = hull_slopes.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if hull_slopes[mid] <= c:
            hi = mid
        else:
            lo = mid + 1
    j = hull[lo]
    if xs[j] <= x_max:
        return j
    best = 0
    best_val = c * xs[0] - mu[0]
    for i in range(1, xs.shape[0]):
        if xs[i] > x_max:
            break
        v = c * xs[i] - mu[i]
        if v < best_val:
            best_val = v
            best = i
    return best


@njit(cache=True)
def choose_energy_nb(w, s, V, p_max, xs, mu, hull, hull_slopes):
    """Grid index of the received SNR for a sensor with weight ``w`` and gain ``s``.

    Index 0 is the NULL operating point ``snr0``.
    """
    if w <= 0.0:
        return 0
    return best_index_nb(V / (s * w), p_max * s, xs, mu, hull, hull_slopes)


@njit(cache=True)
def run_slots(
    t_begin,
    n_slots,
    horizon,
    warmup,
    tail_start,
    s_buf,
    ua_buf,
    us_buf,
    kind,
    period,
    phase,
    size,
    q_arr,
    xs,
    mu,
    mode_of,
    success,
    rates,
    hull,
    hull_slopes,
    V,
    p_max,
    nu,
    zeta,
    q_th,
    policy,
    sleep_enabled,
    tau,
    e_null,
    Q,
    X,
    asleep,
    last_arrival,
    state_i,
    acc,
    q_sum,
    a_sum,
    served_sum,
    sleep_count,
    wake_count,
    trace_k,
    trace_mode,
    trace_energy,
    trace_success,
    record,
):
    """Advance the state through ``n_slots`` slots starting at ``t_begin``.

    ``state_i[0]`` holds the slot of the most recent arrival anywhere.
    Sleeping sensors are excluded from polling; with ``sleep_enabled`` an
    all-idle slot triggers the switching test for every connected sensor.
    """
    K = Q.shape[0]
    W = np.empty(K)
    A = np.empty(K)
    for i in range(n_slots):
        t = t_begin + i
        counted = t >= warmup
        any_arrival = False
        for k in range(K):
            if kind[k] == ARRIVAL_DETERMINISTIC:
                A[k] = size[k] if (t - phase[k]) % period[k] == 0 else 0.0
            else:
                A[k] = size[k] if ua_buf[i, k] < q_arr[k] else 0.0
            if A[k] > 0.0:
                any_arrival = True
        n_connected = 0
        for k in range(K):
            w, sat = weight_nb(Q[k], X[k], zeta, q_th)
            W[k] = w
            if sat and counted:
                acc[ACC_SATURATED] += 1.0
            if not asleep[k]:
                n_connected += 1

        # polling decision
        k_sel = -1
        j_sel = 0
        if policy == POLICY_ROUND_ROBIN:
            k = t % K
            if not asleep[k]:
                k_sel = k
                j_sel = choose_energy_nb(W[k], s_buf[i, k], V, p_max, xs, mu, hull, hull_slopes)
        else:
            best = math.inf
            for k in range(K):
                if asleep[k]:
                    continue
                j = choose_energy_nb(W[k], s_buf[i, k], V, p_max, xs, mu, hull, hull_slopes)
                e = xs[j] / s_buf[i, k]
                obj = V * e
                if W[k] > 0.0:
                    obj -= W[k] * mu[j]
                if obj < best:
                    best = obj
                    k_sel = k
                    j_sel = j

        energy = 0.0
        served = 0.0
        ok = False
        ell = 0
        goodput = 0.0
        if k_sel >= 0:
            energy = xs[j_sel] / s_buf[i, k_sel]
            if W[k_sel] > 0.0:
                ell = mode_of[j_sel]
                goodput = mu[j_sel]
            if ell > 0:
                ok = us_buf[i] < success[ell, j_sel]
                if ok:
                    served = rates[ell]
            if counted:
                acc[ACC_ENERGY] += energy
                if ell == 0 or j_sel == 0:
                    acc[ACC_NULL] += energy
        elif counted:
            acc[ACC_IDLE_SLOTS] += 1.0

        for k in range(K):
            g = goodput if k == k_sel else 0.0
            X[k] = aux_update_nb(X[k], g, Q[k], A[k], nu, q_th)
            d = served if k == k_sel else 0.0
            Q[k] = max(Q[k] - d, 0.0) + A[k]

        if sleep_enabled:
            for k in range(K):
                if asleep[k] and A[k] > 0.0:
                    asleep[k] = False
                    if counted:
                        acc[ACC_RECONNECT] += tau * e_null
                        wake_count[k] += 1
            if any_arrival:
                state_i[0] = t
                for k in range(K):
                    if A[k] > 0.0:
                        last_arrival[k] = t
            else:
                idle = n_connected > 0
                for k in range(K):
                    if not asleep[k] and W[k] > 0.0:
                        idle = False
                if idle:
                    limit = tau * n_connected
                    for k in range(K):
                        if asleep[k]:
                            continue
                        if kind[k] == ARRIVAL_DETERMINISTIC:
                            remaining = float(period[k] - (t - last_arrival[k]))
                        else:
                            remaining = 1.0 / q_arr[k]
                        if remaining > limit:
                            asleep[k] = True
                            if counted:
                                sleep_count[k] += 1
        elif any_arrival:
            state_i[0] = t
            for k in range(K):
                if A[k] > 0.0:
                    last_arrival[k] = t

        if counted:
            acc[ACC_SLOTS] += 1.0
            for k in range(K):
                q_sum[k] += Q[k]
                a_sum[k] += A[k]
            if k_sel >= 0:
                served_sum[k_sel] += served
        if t >= tail_start:
            for k in range(K):
                if Q[k] > acc[ACC_MAXQ_TAIL]:
                    acc[ACC_MAXQ_TAIL] = Q[k]
        if record:
            trace_k[i] = k_sel
            trace_mode[i] = ell
            trace_energy[i] = energy
            trace_success[i] = ok
