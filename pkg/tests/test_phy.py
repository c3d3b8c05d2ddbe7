import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piconet.phy import (
    PACKET_TYPES,
    GoodputTable,
    PhyMode,
    PhyModeSet,
    ThresholdMode,
    ber_8dpsk,
    ber_dqpsk,
    ber_gfsk,
    db_to_linear,
    effective_rate_mu,
    p_access_code,
    p_access_code_from_ber,
    p_header_from_ber,
    p_null,
    p_packet,
    p_payload,
)

mp.mp.dps = 40


def gfsk_oracle(snr):
    """Closed-form GFSK BER evaluated in extended precision with quadrature Marcum Q."""
    h = mp.mpf("0.29")
    c = mp.sin(2 * mp.pi * h) / (2 * mp.pi * h)
    root = mp.sqrt(1 - c * c)
    a = mp.sqrt(mp.mpf(snr) / 2 * (1 - root))
    b = mp.sqrt(mp.mpf(snr) / 2 * (1 + root))
    q1 = mp.quad(lambda x: x * mp.exp(-(x * x + a * a) / 2) * mp.besseli(0, a * x), [b, b + 10, mp.inf])
    return float(q1 - mp.exp(-(a * a + b * b) / 2) * mp.besseli(0, a * b) / 2)


DEFAULT = PhyModeSet.bluetooth()


class TestBitErrorRates:
    def test_gfsk_zero_snr(self):
        assert ber_gfsk(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_gfsk_high_snr_matches_oracle(self):
        assert ber_gfsk(100.0) < 1e-3
        assert ber_gfsk(100.0) == pytest.approx(gfsk_oracle(100.0), rel=1e-6, abs=1e-15)

    @pytest.mark.parametrize("snr", [0.5, 2.0, 6.3, 10.0, 30.0])
    def test_gfsk_against_oracle(self, snr):
        assert ber_gfsk(snr) == pytest.approx(gfsk_oracle(snr), abs=1e-10)

    def test_gfsk_decreasing(self):
        assert ber_gfsk(10.0) > ber_gfsk(20.0)

    def test_dpsk_zero_snr(self):
        assert ber_dqpsk(0.0) == 0.5
        assert ber_8dpsk(0.0) == pytest.approx(1 / 3)

    def test_dqpsk_at_ten(self):
        ref = float(mp.erfc(mp.sqrt(10 * (2 - mp.sqrt(2))) / mp.sqrt(2)) / 2)
        assert ber_dqpsk(10.0) == pytest.approx(ref, abs=1e-15)
        assert ber_dqpsk(10.0) == pytest.approx(0.00776, abs=1e-5)

    def test_8dpsk_formula(self):
        s = mp.sin(mp.pi / 8)
        arg = mp.sqrt(20) * (mp.sqrt(1 + s) - mp.sqrt(1 - s))
        ref = float(mp.mpf(2) / 3 * mp.erfc(arg / mp.sqrt(2)) / 2)
        assert ber_8dpsk(20.0) == pytest.approx(ref, rel=1e-12)


class TestPacketChain:
    def test_access_code_limits(self):
        assert p_access_code_from_ber(0.0) == 1.0
        assert p_access_code_from_ber(1.0, 6) == 0.0

    def test_access_code_binomial(self):
        eps = 0.03
        ref = sum(math.comb(64, k) * eps**k * (1 - eps) ** (64 - k) for k in range(7))
        assert p_access_code_from_ber(eps, 6) == pytest.approx(ref, rel=1e-12)

    def test_access_code_rejects_margin(self):
        with pytest.raises(ValueError):
            p_access_code(10.0, 65)

    def test_header_limits_and_half(self):
        assert p_header_from_ber(0.0) == 1.0
        assert p_header_from_ber(1.0) == 0.0
        exact = Fraction(1, 2) ** 18
        assert p_header_from_ber(0.5) == pytest.approx(float(exact), rel=1e-14)
        assert p_header_from_ber(0.5) == pytest.approx(3.815e-6, rel=1e-3)

    def test_payload_log_domain(self):
        mode = PhyMode.from_label("2dh3")

        class Fixed(PhyMode):
            def ber(self, snr):
                return 1e-5

        fixed = Fixed(mode.label, mode.raw_rate, mode.slots, mode.payload_bits)
        ref = float((1 - mp.mpf("1e-5")) ** 2968)
        assert p_payload(fixed, 1.0) == pytest.approx(ref, rel=1e-12)
        assert p_payload(fixed, 1.0) == pytest.approx(0.9707, abs=1e-4)

    def test_payload_limits(self):
        mode = PhyMode.from_label("3dh5")
        assert p_payload(mode, 1e9) == pytest.approx(1.0)
        assert p_payload(mode, 0.0) == 0.0

    def test_payload_rejects_null(self):
        with pytest.raises(ValueError):
            p_payload(None, 10.0)

    def test_packet_limits(self):
        mode = PhyMode.from_label("2dh3")
        assert p_packet(mode, 1e6) == pytest.approx(1.0, abs=1e-12)
        assert p_packet(mode, 0.0) < 1e-10

    def test_2dh3_crosses_099_in_waterfall(self):
        x = DEFAULT.waterfall(1, 0.99)
        db = 10 * math.log10(x)
        assert 10.0 <= db <= 25.0
        assert DEFAULT.success(1, x) == pytest.approx(0.99, abs=1e-8)
        # regression anchor of the closed form
        assert db == pytest.approx(15.388, abs=0.01)

    def test_null_limits(self):
        assert p_null(1e6) == pytest.approx(1.0)
        assert p_null(0.0) < 1e-6

    def test_null_at_8db_anchor(self):
        # literal formulas give about 0.80 here; see the decisions ledger
        assert p_null(db_to_linear(8.0)) == pytest.approx(0.95, abs=0.02)


class TestModeTables:
    def test_payload_bits(self):
        assert {k: v[2] for k, v in PACKET_TYPES.items()} == {
            "2dh1": 464, "2dh3": 2968, "2dh5": 5464, "3dh1": 696, "3dh3": 4448, "3dh5": 8200,
        }

    def test_default_rates(self):
        assert DEFAULT.rates[0] == 0.0
        assert DEFAULT.rates[1] == pytest.approx(2 * 367 / 371, rel=1e-15)
        assert DEFAULT.rates[2] == pytest.approx(3 * 552 / 556, rel=1e-15)
        assert DEFAULT.snr0 == pytest.approx(6.3096, abs=1e-4)
        assert DEFAULT.labels == ("null", "2dh3", "3dh3")

    def test_modes_sorted(self):
        ms = PhyModeSet.bluetooth(["3dh5", "2dh1", "3dh1"])
        assert list(ms.rates) == sorted(ms.rates)

    def test_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            PhyMode.from_label("4dh3")


class TestEffectiveRate:
    def test_below_threshold_is_zero(self):
        assert effective_rate_mu(DEFAULT, DEFAULT.snr0 * 0.99) == (0.0, 0)

    def test_high_snr_limit(self):
        mu, ell = effective_rate_mu(DEFAULT, 1e7)
        assert mu == pytest.approx(DEFAULT.rates[-1])
        assert ell == 2

    def test_picks_larger_goodput(self):
        ms = PhyModeSet.thresholds([1.5, 3.0], [2.0, 4.0])
        # at snr 3 only mode 1 succeeds: goodput 1.5 versus 0
        assert effective_rate_mu(ms, 3.0) == (1.5, 1)
        grid = np.linspace(0.1, 6, 200)
        mu, ell = effective_rate_mu(ms, grid)
        brute = np.max(ms.rates[:, None] * ms.success_matrix(grid), axis=0)
        np.testing.assert_array_equal(mu, brute)

    def test_tie_goes_to_smaller_mode(self):
        ms = PhyModeSet.thresholds([1.0, 2.0], [5.0, 5.0])
        modes_equal = PhyModeSet((ThresholdMode("a", 1.0, 1.0), ThresholdMode("b", 2.0, 9.0)), 0.0)
        assert effective_rate_mu(ms, 6.0)[1] == 2
        # zero goodput everywhere below the first threshold: mode 0
        assert effective_rate_mu(modes_equal, 0.5) == (0.0, 0)

    def test_monotone_in_snr(self):
        x = db_to_linear(np.linspace(0, 40, 200))
        P = DEFAULT.success_matrix(x)
        assert np.all(np.diff(P, axis=1) >= -1e-13)  # rounding near 1
        mu, _ = effective_rate_mu(DEFAULT, x)
        assert np.all(np.diff(mu) >= -1e-15)

    def test_packet_below_null(self):
        x = db_to_linear(np.linspace(0, 40, 200))
        pn = p_null(x)
        for mode in DEFAULT.modes:
            assert np.all(p_packet(mode, x) <= pn + 1e-15)
        assert np.all(pn <= 1.0)


class TestGoodputTable:
    table = GoodputTable.build(DEFAULT)

    def test_starts_at_snr0(self):
        assert self.table.x[0] == DEFAULT.snr0

    def test_hull_slopes_decreasing(self):
        assert np.all(np.diff(self.table.hull_slopes) <= 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-6, 10.0), st.floats(7.0, 1e5))
    def test_best_index_matches_brute_force(self, c, x_max):
        t = self.table
        j = t.best_index(c, x_max)
        feasible = t.x <= x_max
        vals = np.where(feasible, c * t.x - t.mu, np.inf)
        assert t.x[j] <= x_max
        assert vals[j] <= vals.min() + 1e-9 * max(1.0, abs(vals.min()))
