"""End-to-end acceptance gate.

Each test checks one criterion at its stated tolerance and prints a single
``CRITERION n: PASS|FAIL`` line (visible even under output capture).
"""

import csv
import io
import math
from pathlib import Path

import numpy as np
import pytest

from oracles import i0_series, marcum_quad, mp_q
from piconet.channel import ChannelModel, DiscreteChannel
from piconet.cli import main
from piconet.config import parse_config
from piconet.minenergy import (
    ThresholdRateTable,
    decision_rule,
    monte_carlo_gamma_c,
    phi_lower,
    phi_upper,
    phi_upper_unoptimized,
    prune_to_concave,
    single_sensor_gamma_c,
    solve_lambda,
    subgradient_solve,
    table_at,
    two_mass_allocation,
    waterfall_limits,
)
from piconet.numerics import bessel_i0, gaussian_q, marcum_q1, rng_stream
from piconet.phy import PhyModeSet, db_to_linear, p_null
from piconet.policy import ArrivalLaw
from piconet.sim import Scenario, Simulator, episode_seed, pool_replicates, sweep_v

CONFIGS = Path(__file__).parent.parent / "configs"
BLUETOOTH = PhyModeSet.bluetooth()
CHANNEL = ChannelModel()
LAMBDAS = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5)
V_TRADEOFF = (10.0, 1e2, 1e3, 1e4)
T_LONG = 1_000_000
SEEDS = 5


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return _report


def slopes_nondecreasing(x, y, rel=1e-6):
    s = np.diff(y) / np.diff(x)
    return bool(np.all(np.diff(s) >= -rel * np.max(np.abs(y))))


def test_criterion_01_null_anchor(report):
    val = float(p_null(db_to_linear(8.0)))
    report(1, 0.93 <= val <= 0.97, f"p_null(8 dB) = {val:.4f}, required in [0.93, 0.97]")


def test_criterion_02_special_functions(report):
    rng = np.random.default_rng(2)
    x = np.linspace(-8, 8, 100)
    err_q = np.max(np.abs(gaussian_q(x) - [mp_q(v) for v in x]))
    xi = np.linspace(0, 30, 100)
    ref_i0 = np.array([i0_series(v) for v in xi])
    err_i0 = np.max(np.abs(bessel_i0(xi) - ref_i0) / ref_i0)
    a, b = rng.uniform(0, 12, 100), rng.uniform(0, 12, 100)
    err_m = np.max(np.abs(marcum_q1(a, b) - [marcum_quad(u, v) for u, v in zip(a, b)]))
    ok = err_q <= 1e-12 and err_i0 <= 1e-10 and err_m <= 1e-9
    report(2, ok, f"max errors Q {err_q:.1e} (abs), I0 {err_i0:.1e} (rel), Q1 {err_m:.1e} (abs)")


@pytest.fixture(scope="module")
def bounds_curves():
    lo = np.array([phi_lower(lam, BLUETOOTH, CHANNEL).value for lam in LAMBDAS])
    up = np.array([phi_upper(lam, BLUETOOTH, CHANNEL, grid_per_dim=15).value for lam in LAMBDAS])
    raw = np.array([phi_upper_unoptimized(lam, BLUETOOTH, CHANNEL).value for lam in LAMBDAS])
    return lo, up, raw


def test_criterion_03_bound_ordering(report, bounds_curves):
    lo, up, raw = bounds_curves
    lam = np.array(LAMBDAS)
    ordered = bool(np.all(lo <= up) and np.all(up <= raw))
    monotone = bool(np.all(np.diff(lo) >= 0) and np.all(np.diff(up) >= 0))
    convex = slopes_nondecreasing(lam, lo) and slopes_nondecreasing(lam, up)
    detail = (f"lower {np.round(lo, 2).tolist()}, upper {np.round(up, 2).tolist()}, "
              f"unoptimized {np.round(raw, 2).tolist()}; ordered={ordered} monotone={monotone} convex={convex}")
    report(3, ordered and monotone and convex, detail)


def test_criterion_04_cross_method(report):
    table = prune_to_concave(table_at(BLUETOOTH, [hi for _, hi in waterfall_limits(BLUETOOTH)]))
    rel = []
    for lam in (0.5, 1.5, 2.5):
        sg = subgradient_solve(lam, table, CHANNEL, K=1, rng=rng_stream(40))
        cf = solve_lambda(lam, table, CHANNEL)
        rel.append(abs(sg.value - cf.value) / cf.value)
    z = []
    for omega in (0.3, 1.0, 3.0):
        est = monte_carlo_gamma_c(omega, table, CHANNEL, K=1, n_samples=100_000, rng=rng_stream(41))
        g, c = single_sensor_gamma_c(omega, table, CHANNEL)
        z.append(max(abs(est.gamma - g) / est.gamma_se, abs(est.c[0] - c) / max(est.c_se[0], 1e-300)))
    ok = max(rel) <= 0.01 and max(z) <= 3
    report(4, ok, f"subgradient vs closed form max rel diff {max(rel):.2e}; Monte Carlo max |z| {max(z):.2f}")


def test_criterion_05_decision_rule_brute_force(report):
    law = DiscreteChannel((0.2, 0.9, 2.4), (0.25, 0.45, 0.3))
    table = ThresholdRateTable(np.array([0.5, 1.5, 4.0]), np.array([0.0, 1.0, 1.8]))
    omega = np.array([1.1, 2.3])
    states = [(i, j) for i in range(3) for j in range(3)]
    prob = np.array([law.probs[i] * law.probs[j] for i, j in states])
    gains = np.array([[law.values[i], law.values[j]] for i, j in states])
    options = [(k, ell) for k in range(2) for ell in range(3)]
    # per-state weighted Lagrangian cost of each (sensor, mode) option
    cost = np.array([[prob[n] * (table.a[ell] / gains[n, k] - omega[k] * table.r[ell]) for k, ell in options]
                     for n in range(len(states))])
    head, tail = cost[:5], cost[5:]

    def all_sums(block):
        total = np.zeros(1)
        for row in block:
            total = (total[:, None] + row[None, :]).ravel()
        return total

    a, b = all_sums(head), all_sums(tail)
    brute = min(float(np.min(a[i:i + 512, None] + b[None, :])) for i in range(0, a.size, 512))
    n_assign = a.size * b.size
    rule = 0.0
    for n in range(len(states)):
        k, ell = decision_rule(omega, table, gains[n])
        rule += prob[n] * (table.a[ell] / gains[n, k] - omega[k] * table.r[ell])
    gap = abs(rule - brute)
    report(5, gap <= 1e-12 * max(1.0, abs(brute)),
           f"{n_assign} assignments enumerated; rule {rule:.15f} vs exhaustive {brute:.15f} (gap {gap:.1e})")


def test_criterion_06_appendix_lemmas(report):
    rng = np.random.default_rng(6)
    worst_energy, worst_rate = -math.inf, 0.0
    for _ in range(100):
        pts = rng.uniform([0.5, 0.1], [20, 5], size=(rng.integers(1, 6), 2))
        t = prune_to_concave(ThresholdRateTable(np.r_[rng.uniform(0, 0.5), pts[:, 0]], np.r_[0.0, pts[:, 1]]))
        mu_bar = lambda x: np.interp(x, t.a, t.r)
        s = rng.uniform(0.05, 3)
        e = rng.uniform(t.a[0] / s, t.a[-1] / s, 2)
        p = rng.uniform()
        rate_mixed = p * mu_bar(e[0] * s) + (1 - p) * mu_bar(e[1] * s)
        # cheapest deterministic energy reaching the mixed rate
        e_det = np.interp(rate_mixed, t.r, t.a) / s
        worst_energy = max(worst_energy, e_det - (p * e[0] + (1 - p) * e[1]))
        worst_rate = max(worst_rate, abs(mu_bar(e_det * s) - rate_mixed))
    lemma1 = worst_energy <= 1e-9 and worst_rate <= 1e-9
    worst2e, worst2r, consecutive = -math.inf, 0.0, True
    for _ in range(100):
        pts = rng.uniform([0.1, 0.1], [20, 5], size=(rng.integers(1, 6), 2))
        t = prune_to_concave(ThresholdRateTable(np.r_[0.0, pts[:, 0]], np.r_[0.0, pts[:, 1]]))
        w = rng.dirichlet(np.ones(t.L + 1))
        q, cost = two_mass_allocation(t, float(w @ t.r))
        worst2e = max(worst2e, cost - float(w @ t.a))
        worst2r = max(worst2r, abs(float(q @ t.r) - float(w @ t.r)))
        sup = np.flatnonzero(q)
        consecutive &= sup.size <= 2 and (sup.size < 2 or sup[1] == sup[0] + 1)
    lemma2 = worst2e <= 1e-9 and worst2r <= 1e-9 and consecutive
    report(6, lemma1 and lemma2,
           f"Jensen: max energy excess {worst_energy:.1e}, rate error {worst_rate:.1e}; "
           f"two-mass: max energy excess {worst2e:.1e}, rate error {worst2r:.1e}, consecutive={consecutive}")


def pooled_sweep(scenario, v_list, warmup, seed):
    return [pool_replicates(V, runs) for V, runs in sweep_v(scenario, v_list, T_LONG, warmup, seed, SEEDS)]


def test_criterion_07_tradeoff(report, bounds_curves):
    sc = Scenario((ArrivalLaw("deterministic", 1.0),))
    pts = pooled_sweep(sc, V_TRADEOFF, None, 70)
    e = np.array([p.energy for p in pts]); e_se = np.array([p.energy_se for p in pts])
    d = np.array([p.delay for p in pts]); d_se = np.array([p.delay_se for p in pts])
    tol_e = 2 * np.hypot(e_se[1:], e_se[:-1])
    tol_d = 2 * np.hypot(d_se[1:], d_se[:-1])
    e_ok = bool(np.all(np.diff(e) <= tol_e))
    d_ok = bool(np.all(np.diff(d) >= -tol_d))
    phi_up = float(bounds_curves[1][LAMBDAS.index(1.0)])
    near = e[-1] <= 1.10 * phi_up
    slope = float(np.polyfit(np.log(V_TRADEOFF), np.log(d), 1)[0])
    slope_ok = 0.3 <= slope <= 0.7
    unstable = any(p.unstable for p in pts)
    detail = (f"energy {np.round(e, 3).tolist()}, delay {np.round(d, 1).tolist()}, "
              f"upper bound {phi_up:.3f}, delay exponent {slope:.3f}, unstable={unstable}")
    report(7, e_ok and d_ok and near and slope_ok and not unstable, detail)


def test_criterion_08_opportunistic_vs_round_robin(report):
    cfg = parse_config(CONFIGS / "two_sensor_tradeoff.yaml")
    curves = {}
    for policy in ("opportunistic", "round_robin"):
        pts = pooled_sweep(cfg.scenario_for(policy, V_TRADEOFF[0]), V_TRADEOFF, None, 80)
        curves[policy] = pts
    op, rr = curves["opportunistic"], curves["round_robin"]
    lo = max(min(p.delay for p in op), min(p.delay for p in rr))
    hi = min(max(p.delay for p in op), max(p.delay for p in rr))
    probes = np.geomspace(lo, hi, 5)[1:4]

    def interp(pts, x, attr):
        d = np.log([p.delay for p in pts])
        return float(np.interp(np.log(x), d, [getattr(p, attr) for p in pts]))

    ok, parts = True, []
    for x in probes:
        eo, er = interp(op, x, "energy"), interp(rr, x, "energy")
        tol = 2 * math.hypot(interp(op, x, "energy_se"), interp(rr, x, "energy_se"))
        ok &= eo <= er + tol
        parts.append(f"D={x:.0f}: {eo:.3f} vs {er:.3f}")
    report(8, ok and lo < hi, "opportunistic vs round robin energy at interior delays: " + "; ".join(parts))


def trace_csv(sim):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("k", "mode", "energy", "success"))
    for row in zip(sim.trace["k"], sim.trace["mode"], sim.trace["energy"], sim.trace["success"]):
        w.writerow((int(row[0]), int(row[1]), repr(float(row[2])), int(row[3])))
    return buf.getvalue().encode()


def sleep_sweep(cfg, taus, v_list, seed):
    """Matched-seed runs: {tau or None: [(V, [metrics...])]}."""
    out = {None: sweep_v(cfg.scenario_for("opportunistic", v_list[0]), v_list, T_LONG, cfg.warmup, seed, SEEDS)}
    for tau in taus:
        sc = cfg.scenario_for("opportunistic_sleep", v_list[0], tau)
        out[tau] = sweep_v(sc, v_list, T_LONG, cfg.warmup, seed, SEEDS)
    return out


def paired(a_runs, b_runs):
    d = np.array([a.avg_energy - b.avg_energy for a, b in zip(a_runs, b_runs)])
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def test_criterion_09_sleep_switching(report):
    cfg = parse_config(CONFIGS / "bursty_sleep.yaml")
    v_list = list(cfg.V)

    # (a) tau = 10 never switches: identical decision trace
    seed = episode_seed(cfg.seed, 0, 0)
    plain = Simulator(cfg.scenario_for("opportunistic", 100.0), T_LONG, cfg.warmup, seed, record=True)
    plain.run()
    lazy = Simulator(cfg.scenario_for("opportunistic_sleep", 100.0, 10.0), T_LONG, cfg.warmup, seed, record=True)
    m_lazy = lazy.run()
    part_a = trace_csv(plain) == trace_csv(lazy) and m_lazy.sleeps.sum() == 0

    # (b) energy falls as tau falls, at every V with matched seeds
    runs = sleep_sweep(cfg, (1.0, 2.0, 5.0, 10.0), v_list, cfg.seed)
    part_b, gaps = True, []
    for iv in range(len(v_list)):
        for small, large in ((1.0, 2.0), (2.0, 5.0), (5.0, 10.0)):
            mean, se = paired(runs[small][iv][1], runs[large][iv][1])
            # strict decrease of the paired mean; stricter than the 2-SE allowance
            part_b &= mean < 0
            gaps.append(mean)
    # (c) two bursty sensors gain from switching; a saturated partner never sleeps
    pair = parse_config(CONFIGS / "bursty_pair_sleep.yaml")
    pr = sleep_sweep(pair, (1.0,), list(pair.V), pair.seed)
    gain = True
    for iv in range(len(pair.V)):
        mean, se = paired(pr[1.0][iv][1], pr[None][iv][1])
        gain &= mean + 2 * se < 0
    mixed = parse_config(CONFIGS / "mixed_pair_sleep.yaml")
    mr = sleep_sweep(mixed, (1.0,), list(mixed.V), mixed.seed)
    no_events = all(m.sleeps[1] == 0 for _, ms in mr[1.0] for m in ms)
    coincide = True
    for iv in range(len(mixed.V)):
        a, b = pool_replicates(0, mr[1.0][iv][1]), pool_replicates(0, mr[None][iv][1])
        coincide &= abs(a.energy - b.energy) <= 2 * math.hypot(a.energy_se, b.energy_se) + 1e-12
    part_c = gain and no_events and coincide
    sleeps = {V: int(sum(m.sleeps.sum() for m in runs[1.0][iv][1])) for iv, V in enumerate(v_list)}
    detail = (f"(a) tau=10 trace identical={part_a}; (b) all tau steps lower energy={part_b} "
              f"(largest paired gap {max(gaps):.3f}; tau=1 sleep events per V {sleeps}); (c) pair gain={gain}, "
              f"saturated sensor sleeps=0: {no_events}, curves coincide={coincide}")
    report(9, part_a and part_b and part_c, detail)


def test_criterion_10_sweep_determinism(report, tmp_path):
    text = (CONFIGS / "bursty_pair_sleep.yaml").read_text().replace("T: 1000000", "T: 300000")
    cfg = tmp_path / "pair.yaml"
    cfg.write_text(text)
    dirs = [tmp_path / "first", tmp_path / "second"]
    codes = [main(["sweep", "--config", str(cfg), "--out", str(d)]) for d in dirs]
    names = sorted(p.name for p in dirs[0].iterdir() if p.suffix in (".csv", ".dat"))
    same = all((dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    report(10, codes == [0, 0] and same and len(names) > 0, f"{len(names)} output files compared, identical={same}")
