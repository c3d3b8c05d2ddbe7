"""Slotted simulation of the piconet under a scheduling policy."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .channel import ChannelModel
from .numerics import rng_stream
from .phy import GoodputTable, PhyModeSet
from .policy import (
    DEFAULT_P_MAX,
    ArrivalLaw,
    SchedulerConfig,
    SchedulerState,
    derive_constants,
    queue_update,
    round_robin_slot,
    schedule_slot,
    sleep_check,
    update_aux_queue,
    wake_up,
)

POLICIES = ("opportunistic", "round_robin", "opportunistic_sleep")
CHUNK = 1 << 16
INSTABILITY_FACTOR = 100.0


@lru_cache(maxsize=16)
def goodput_table(modes: PhyModeSet) -> GoodputTable:
    return GoodputTable.build(modes)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate one operating point."""

    sensors: tuple[ArrivalLaw, ...]
    modes: PhyModeSet = field(default_factory=PhyModeSet.bluetooth)
    channel: ChannelModel = field(default_factory=ChannelModel)
    policy: str = "opportunistic"
    V: float = 100.0
    P_max: float = DEFAULT_P_MAX
    tau: float = 10.0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if not self.sensors:
            raise ValueError("at least one sensor is required")
        object.__setattr__(self, "sensors", tuple(self.sensors))

    @property
    def K(self) -> int:
        return len(self.sensors)

    @property
    def A_max(self) -> float:
        return max(s.size for s in self.sensors)

    def scheduler_config(self) -> SchedulerConfig:
        return derive_constants(self.V, self.A_max, self.modes, self.P_max, self.channel.s_min)


@dataclass
class SimMetrics:
    avg_energy: float
    avg_queue: np.ndarray
    avg_delay: np.ndarray
    null_energy: float
    reconnect_energy: float
    slots_run: int
    warmup_discarded: int
    unstable: bool
    max_queue_tail: float
    q_th: float
    throughput: np.ndarray
    sleeps: np.ndarray = None
    wakes: np.ndarray = None
    idle_slots: int = 0
    saturated: int = 0


@dataclass(frozen=True)
class SlotRecord:
    k: int
    mode: int
    energy: float
    success: bool
    arrivals: tuple
    reconnect: float


class Simulator:
    """Owns the state, random buffers and goodput table of one episode.

    ``run`` advances through the compiled loop; ``step`` advances one slot
    through the Python policy functions and serves as a reference.  Both
    consume the same pre-drawn random buffers, so traces coincide.
    """

    def __init__(self, scenario: Scenario, T: int, warmup: Optional[int] = None, seed: int = 0,
                 record: bool = False, chunk: int = CHUNK):
        if warmup is None:
            warmup = T // 10
        if not 0 <= warmup < T:
            raise ValueError("need 0 <= warmup < T")
        self.scenario = scenario
        self.T, self.warmup, self.seed = int(T), int(warmup), int(seed)
        self.config = scenario.scheduler_config()
        self.table = goodput_table(scenario.modes)
        self.e_null = scenario.modes.snr0 * scenario.channel.mean_inverse_gain()
        self.record = record
        self.chunk = int(chunk)
        K = scenario.K
        self.state = SchedulerState.initial(K)
        for k, s in enumerate(scenario.sensors):
            if s.kind == "deterministic":
                self.state.last_arrival[k] = s.phase - s.period
        self._rng_channel = rng_stream(self.seed, 0)
        self._rng_arrival = rng_stream(self.seed, 1)
        self._rng_success = rng_stream(self.seed, 2)
        self._buf_start = 0
        self._buf_len = 0
        self._acc = np.zeros(_kernel.N_ACC)
        self._q_sum = np.zeros(K)
        self._a_sum = np.zeros(K)
        self._served_sum = np.zeros(K)
        self._sleeps = np.zeros(K, dtype=np.int64)
        self._wakes = np.zeros(K, dtype=np.int64)
        self._state_i = np.array([-1], dtype=np.int64)
        self.trace: dict[str, list] = {"k": [], "mode": [], "energy": [], "success": []}

        sensors = scenario.sensors
        self._kind = np.array(
            [_kernel.ARRIVAL_DETERMINISTIC if s.kind == "deterministic" else _kernel.ARRIVAL_GEOMETRIC for s in sensors],
            dtype=np.int64,
        )
        self._period = np.array([s.period for s in sensors], dtype=np.int64)
        self._phase = np.array([s.phase for s in sensors], dtype=np.int64)
        self._size = np.array([s.size for s in sensors])
        self._q = np.array([s.q for s in sensors])

    @property
    def t(self) -> int:
        return self.state.t

    def _refill(self):
        n = min(self.chunk, self.T - self.state.t)
        K = self.scenario.K
        self._s = self.scenario.channel.sample(self._rng_channel, K, n)
        self._ua = self._rng_arrival.random((n, K))
        self._us = self._rng_success.random(n)
        self._buf_start = self.state.t
        self._buf_len = n

    def _buffer_index(self) -> int:
        i = self.state.t - self._buf_start
        if i >= self._buf_len:
            self._refill()
            i = 0
        return i

    def _arrivals(self, i: int) -> np.ndarray:
        t = self.state.t
        A = np.zeros(self.scenario.K)
        for k, s in enumerate(self.scenario.sensors):
            if s.kind == "deterministic":
                A[k] = self._size[k] if (t - s.phase) % s.period == 0 else 0.0
            else:
                A[k] = self._size[k] if self._ua[i, k] < s.q else 0.0
        return A

    def step(self) -> SlotRecord:
        """Advance one slot via the Python policy functions (no metric accumulation)."""
        if self.state.t >= self.T:
            raise RuntimeError("episode finished")
        i = self._buffer_index()
        st, cfg, table = self.state, self.config, self.table
        S = self._s[i]
        A = self._arrivals(i)
        W = [_kernel.weight_nb(q, x, cfg.zeta, cfg.q_th)[0] for q, x in zip(st.Q, st.X)]
        if self.scenario.policy == "round_robin":
            dec = round_robin_slot(st, S, cfg, table)
        else:
            dec = schedule_slot(st, S, cfg, table)
        ok = dec.mode > 0 and self._us[i] < table.success[dec.mode, dec.grid_index]
        served = table.rates[dec.mode] if ok else 0.0
        for k in range(st.K):
            g = dec.goodput if k == dec.k else 0.0
            st.X[k] = update_aux_queue(st.X[k], g, st.Q[k], A[k], cfg)
            st.Q[k] = queue_update(st.Q[k], served if k == dec.k else 0.0, A[k])
        reconnect = 0.0
        any_arrival = bool(np.any(A > 0))
        if self.scenario.policy == "opportunistic_sleep":
            for k in range(st.K):
                if A[k] > 0:
                    reconnect += wake_up(st, k, self.scenario.tau, self.e_null)
            if not any_arrival:
                for k in sleep_check(st, W, self.scenario.sensors, self.scenario.tau, any_arrival):
                    st.asleep[k] = True
        if any_arrival:
            st.t0_last_arrival = st.t
            st.last_arrival[A > 0] = st.t
        st.t += 1
        return SlotRecord(dec.k, dec.mode, dec.energy, bool(ok), tuple(A), reconnect)

    def run(self) -> SimMetrics:
        """Run the remaining slots through the compiled loop and return metrics."""
        if self.state.t != 0:
            raise RuntimeError("run() expects a fresh simulator")
        sc, cfg, table, st = self.scenario, self.config, self.table, self.state
        policy = _kernel.POLICY_ROUND_ROBIN if sc.policy == "round_robin" else _kernel.POLICY_OPPORTUNISTIC
        tail_start = self.T - max(self.T // 10, 1)
        while st.t < self.T:
            self._buffer_index()
            n = self._buf_len
            if self.record:
                tk = np.empty(n, dtype=np.int64)
                tm = np.empty(n, dtype=np.int64)
                te = np.empty(n)
                ts = np.empty(n, dtype=np.bool_)
            else:
                tk = tm = np.empty(0, dtype=np.int64)
                te = np.empty(0)
                ts = np.empty(0, dtype=np.bool_)
            _kernel.run_slots(
                st.t, n, self.T, self.warmup, tail_start,
                self._s, self._ua, self._us,
                self._kind, self._period, self._phase, self._size, self._q,
                table.x, table.mu, table.mode, table.success, table.rates, table.hull, table.hull_slopes,
                cfg.V, cfg.P_max, cfg.nu, cfg.zeta, cfg.q_th,
                policy, sc.policy == "opportunistic_sleep", float(sc.tau), self.e_null,
                st.Q, st.X, st.asleep, st.last_arrival, self._state_i,
                self._acc, self._q_sum, self._a_sum, self._served_sum, self._sleeps, self._wakes,
                tk, tm, te, ts, self.record,
            )
            if self.record:
                self.trace["k"].append(tk)
                self.trace["mode"].append(tm)
                self.trace["energy"].append(te)
                self.trace["success"].append(ts)
            st.t += n
        st.t0_last_arrival = int(self._state_i[0])
        if self.record:
            self.trace = {key: np.concatenate(v) for key, v in self.trace.items()}
        return self._metrics()

    def _metrics(self) -> SimMetrics:
        acc = self._acc
        n = acc[_kernel.ACC_SLOTS]
        rates = np.array([s.rate for s in self.scenario.sensors])
        avg_q = self._q_sum / n
        with np.errstate(divide="ignore", invalid="ignore"):
            delay = np.where(rates > 0, avg_q / rates, np.nan)
        max_tail = float(acc[_kernel.ACC_MAXQ_TAIL])
        return SimMetrics(
            avg_energy=float((acc[_kernel.ACC_ENERGY] + acc[_kernel.ACC_RECONNECT]) / n),
            avg_queue=avg_q,
            avg_delay=delay,
            null_energy=float(acc[_kernel.ACC_NULL] / n),
            reconnect_energy=float(acc[_kernel.ACC_RECONNECT] / n),
            slots_run=int(n),
            warmup_discarded=self.warmup,
            unstable=max_tail > INSTABILITY_FACTOR * self.config.q_th,
            max_queue_tail=max_tail,
            q_th=self.config.q_th,
            throughput=self._served_sum / n,
            sleeps=self._sleeps.copy(),
            wakes=self._wakes.copy(),
            idle_slots=int(acc[_kernel.ACC_IDLE_SLOTS]),
            saturated=int(acc[_kernel.ACC_SATURATED]),
        )


def run_episode(scenario: Scenario, T: int, warmup: Optional[int] = None, seed: int = 0) -> SimMetrics:
    return Simulator(scenario, T, warmup, seed).run()


def episode_seed(base: int, *key: int) -> int:
    """Deterministic child seed; independent of policy so runs share randomness."""
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _episode_task(args):
    scenario, T, warmup, seed = args
    return run_episode(scenario, T, warmup, seed)


def sweep_v(scenario: Scenario, v_list: Sequence[float], T: int, warmup: Optional[int] = None,
            seed: int = 0, n_seeds: int = 1, jobs: int = 1) -> list[tuple[float, list[SimMetrics]]]:
    """One episode per (V, replicate); seeds depend only on the V index and replicate."""
    if not v_list:
        raise ValueError("v_list must not be empty")
    tasks = [
        (replace(scenario, V=float(v)), T, warmup, episode_seed(seed, iv, rep))
        for iv, v in enumerate(v_list)
        for rep in range(n_seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_task, tasks))
    else:
        results = [_episode_task(t) for t in tasks]
    return [(float(v), results[i * n_seeds:(i + 1) * n_seeds]) for i, v in enumerate(v_list)]


@dataclass(frozen=True)
class PooledPoint:
    V: float
    energy: float
    energy_se: float
    delay: float
    delay_se: float
    unstable: bool


def pool_replicates(V: float, runs: Sequence[SimMetrics], sensor: Optional[int] = None) -> PooledPoint:
    """Mean and standard error across replicates; delay averaged over sensors unless one is named."""
    e = np.array([m.avg_energy for m in runs])
    if sensor is None:
        d = np.array([float(np.nanmean(m.avg_delay)) for m in runs])
    else:
        d = np.array([m.avg_delay[sensor] for m in runs])
    n = len(runs)
    se = (lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    return PooledPoint(V, float(e.mean()), se(e), float(d.mean()), se(d), any(m.unstable for m in runs))
