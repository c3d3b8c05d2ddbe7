"""Bluetooth-like PHY modes: bit/packet success probabilities and goodput.

All SNR arguments are linear received SNR values.  Functions accept scalars
or numpy arrays and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import comb

from .numerics import bessel_i0e, find_root_monotone, gaussian_q, marcum_q1

GFSK_INDEX = 0.29
ACCESS_CODE_BITS = 64
HEADER_BITS = 18
PAYLOAD_OVERHEAD_BYTES = 4

# label -> (raw rate in bit/s/Hz, slots, payload bits)
PACKET_TYPES: dict[str, tuple[int, int, int]] = {
    "2dh1": (2, 1, 464),
    "2dh3": (2, 3, 2968),
    "2dh5": (2, 5, 5464),
    "3dh1": (3, 1, 696),
    "3dh3": (3, 3, 4448),
    "3dh5": (3, 5, 8200),
}

DEFAULT_MODES = ("2dh3", "3dh3")


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def _gfsk_ab(snr):
    c = math.sin(2 * math.pi * GFSK_INDEX) / (2 * math.pi * GFSK_INDEX)
    root = math.sqrt(1.0 - c * c)
    snr = np.asarray(snr, dtype=float)
    # the smaller argument goes first; the other ordering gives BER -> 1
    a = np.sqrt(0.5 * snr * (1.0 - root))
    b = np.sqrt(0.5 * snr * (1.0 + root))
    return a, b


def ber_gfsk(snr):
    """Non-coherent GFSK bit error rate with modulation index 0.29."""
    a, b = _gfsk_ab(snr)
    eps = marcum_q1(a, b) - 0.5 * np.exp(-0.5 * (a - b) ** 2) * bessel_i0e(a * b)
    return _scalar(np.clip(eps, 0.0, 0.5))


def ber_dqpsk(snr):
    snr = np.asarray(snr, dtype=float)
    return _scalar(gaussian_q(np.sqrt(snr * (2.0 - math.sqrt(2.0)))))


def ber_8dpsk(snr):
    snr = np.asarray(snr, dtype=float)
    s = math.sin(math.pi / 8)
    arg = np.sqrt(snr) * (math.sqrt(1.0 + s) - math.sqrt(1.0 - s))
    return _scalar(2.0 / 3.0 * gaussian_q(arg))


_BER = {1: ber_gfsk, 2: ber_dqpsk, 3: ber_8dpsk}


def p_access_code_from_ber(eps, rho: int = 6):
    eps = np.asarray(eps, dtype=float)
    k = np.arange(rho + 1, dtype=float)
    e = eps[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = comb(ACCESS_CODE_BITS, k) * e**k * (1.0 - e) ** (ACCESS_CODE_BITS - k)
    return np.clip(terms.sum(axis=-1), 0.0, 1.0)


def p_access_code(snr, rho: int = 6):
    """Probability that the 64-bit sync word is within ``rho`` bit errors."""
    if not 0 <= rho <= ACCESS_CODE_BITS:
        raise ValueError("correlator margin must lie in [0, 64]")
    return _scalar(p_access_code_from_ber(ber_gfsk(snr), rho))


def p_header_from_ber(eps):
    eps = np.asarray(eps, dtype=float)
    per_bit = (1.0 - eps) ** 3 + 3.0 * eps * (1.0 - eps) ** 2
    return np.clip(per_bit**HEADER_BITS, 0.0, 1.0)


def p_header(snr):
    """Success probability of the 18-bit header under (3,1) repetition."""
    return _scalar(p_header_from_ber(ber_gfsk(snr)))


def p_null(snr, rho: int = 6):
    """Detection probability of a NULL packet (access code and header)."""
    eps = ber_gfsk(snr)
    return _scalar(p_access_code_from_ber(eps, rho) * p_header_from_ber(eps))


@dataclass(frozen=True)
class PhyMode:
    """Enhanced-data-rate packet type from the Bluetooth packet table."""

    label: str
    raw_rate: int
    slots: int
    payload_bits: int
    rho: int = 6

    @classmethod
    def from_label(cls, label: str, rho: int = 6) -> "PhyMode":
        key = label.lower()
        if key not in PACKET_TYPES:
            raise ValueError(f"unknown packet type {label!r}; expected one of {sorted(PACKET_TYPES)}")
        raw, slots, bits = PACKET_TYPES[key]
        return cls(key, raw, slots, bits, rho)

    @property
    def rate(self) -> float:
        """Effective rate with the 4-byte payload header/CRC overhead removed."""
        nbytes = self.payload_bits / 8
        return self.raw_rate * (nbytes - PAYLOAD_OVERHEAD_BYTES) / nbytes

    def ber(self, snr):
        return _BER[self.raw_rate](snr)

    def payload_success(self, snr):
        eps = np.asarray(self.ber(snr), dtype=float)
        with np.errstate(divide="ignore"):
            out = np.exp(self.payload_bits * np.log1p(-np.minimum(eps, 1.0)))
        return _scalar(out)

    def success_probability(self, snr):
        eps1 = ber_gfsk(snr)
        out = (
            p_access_code_from_ber(eps1, self.rho)
            * p_header_from_ber(eps1)
            * np.asarray(self.payload_success(snr))
        )
        return _scalar(np.clip(out, 0.0, 1.0))


@dataclass(frozen=True)
class ThresholdMode:
    """Idealized mode whose packet succeeds iff the SNR reaches ``threshold``."""

    label: str
    rate: float
    threshold: float

    def success_probability(self, snr):
        return _scalar((np.asarray(snr, dtype=float) >= self.threshold).astype(float))


Mode = Union[PhyMode, ThresholdMode]


def p_payload(mode: Mode, snr):
    """Payload success ``(1 - eps)^B``, computed in the log domain."""
    if isinstance(mode, ThresholdMode):
        return mode.success_probability(snr)
    if not isinstance(mode, PhyMode):
        raise ValueError("mode 0 (NULL) carries no payload")
    return mode.payload_success(snr)


def p_packet(mode: Mode, snr):
    """Access code, header and payload all decoded."""
    if not isinstance(mode, (PhyMode, ThresholdMode)):
        raise ValueError("mode 0 (NULL) carries no payload")
    return mode.success_probability(snr)


@dataclass(frozen=True)
class PhyModeSet:
    """Payload modes 1..L plus the idle/NULL mode 0 with threshold ``snr0``."""

    modes: tuple[Mode, ...]
    snr0: float
    rho: int = 6
    null_model: str = "bluetooth"  # or "threshold"
    _rates: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.snr0 < 0:
            raise ValueError("snr0 must be non-negative")
        if not self.modes:
            raise ValueError("at least one payload mode is required")
        modes = tuple(sorted(self.modes, key=lambda m: m.rate))
        rates = [m.rate for m in modes]
        if any(r1 <= r0 for r0, r1 in zip(rates, rates[1:])) or rates[0] <= 0:
            raise ValueError("payload mode rates must be positive and distinct")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "_rates", np.array([0.0] + rates))

    @classmethod
    def bluetooth(
        cls, labels: Sequence[str] = DEFAULT_MODES, snr0_db: float = 8.0, rho: int = 6
    ) -> "PhyModeSet":
        modes = tuple(PhyMode.from_label(lab, rho) for lab in labels)
        return cls(modes, float(db_to_linear(snr0_db)), rho, "bluetooth")

    @classmethod
    def thresholds(
        cls, rates: Sequence[float], thresholds: Sequence[float], snr0: float = 0.0
    ) -> "PhyModeSet":
        modes = tuple(
            ThresholdMode(f"thr{i + 1}", float(r), float(a))
            for i, (r, a) in enumerate(zip(rates, thresholds))
        )
        return cls(modes, float(snr0), 6, "threshold")

    @classmethod
    def capacity(cls, rates: Sequence[float], snr0: float = 0.0) -> "PhyModeSet":
        """Capacity-achieving codes: thresholds ``2**R - 1``."""
        return cls.thresholds(rates, [2.0**r - 1.0 for r in rates], snr0)

    @property
    def L(self) -> int:
        return len(self.modes)

    @property
    def rates(self) -> np.ndarray:
        """``(0, R_1, ..., R_L)``."""
        return self._rates.copy()

    @property
    def labels(self) -> tuple[str, ...]:
        return ("null",) + tuple(m.label for m in self.modes)

    @property
    def max_rate(self) -> float:
        return float(self._rates[-1])

    def null_success(self, snr):
        if self.null_model == "threshold":
            return _scalar((np.asarray(snr, dtype=float) >= self.snr0).astype(float))
        return p_null(snr, self.rho)

    def success(self, ell: int, snr):
        """``P_ell(snr)``; ell = 0 gives the NULL detection probability."""
        if ell == 0:
            return self.null_success(snr)
        return self.modes[ell - 1].success_probability(snr)

    def success_matrix(self, snr) -> np.ndarray:
        """Array of shape ``(L+1, len(snr))`` with ``P_ell(snr)``."""
        snr = np.atleast_1d(np.asarray(snr, dtype=float))
        return np.vstack([np.atleast_1d(self.success(ell, snr)) for ell in range(self.L + 1)])

    def breakpoints(self) -> list[float]:
        """SNR values where some success curve is discontinuous."""
        pts = [m.threshold for m in self.modes if isinstance(m, ThresholdMode)]
        return sorted(set(pts + [self.snr0]))

    def waterfall(self, ell: int, p: float) -> float:
        """SNR at which ``P_ell`` first reaches ``p`` (bisection in log SNR)."""
        mode = self.modes[ell - 1]
        if isinstance(mode, ThresholdMode):
            return mode.threshold
        u = find_root_monotone(
            lambda lu: float(mode.success_probability(math.exp(lu))) - p,
            math.log(1e-3),
            math.log(1e7),
            tol=1e-12,
        )
        return math.exp(u)


def effective_rate_mu(modes: PhyModeSet, snr):
    """Goodput ``max_ell R_ell P_ell(snr)`` and its mode index.

    Zero (mode 0) below ``snr0``; ties go to the smaller index.
    """
    x = np.atleast_1d(np.asarray(snr, dtype=float))
    goodput = modes.rates[:, None] * modes.success_matrix(x)
    goodput[0] = 0.0
    ell = np.argmax(goodput, axis=0)
    mu = goodput[ell, np.arange(x.size)]
    below = x < modes.snr0
    mu[below] = 0.0
    ell[below] = 0
    if np.ndim(snr) == 0:
        return float(mu[0]), int(ell[0])
    return mu, ell


@dataclass(frozen=True)
class GoodputTable:
    """Goodput curve tabulated on a log-spaced received-SNR grid.

    ``hull`` holds the vertices of the upper concave envelope of
    ``(x, mu)``: minimizing ``c*x - mu(x)`` over the grid lands on a hull
    vertex, found by bisection on the (decreasing) segment slopes.
    """

    x: np.ndarray
    mu: np.ndarray
    mode: np.ndarray
    success: np.ndarray  # (L+1, G)
    rates: np.ndarray
    hull: np.ndarray
    hull_slopes: np.ndarray

    @classmethod
    def build(cls, modes: PhyModeSet, n_grid: int = 4096, p_top: float = 1.0 - 1e-9) -> "GoodputTable":
        x_top = max(modes.waterfall(ell, p_top) for ell in range(1, modes.L + 1))
        x_lo = modes.snr0 if modes.snr0 > 0 else 1e-3
        x_top = max(x_top * 1.5, x_lo * 10.0)
        grid = np.geomspace(x_lo, x_top, n_grid)
        pts = [modes.snr0] + [p for p in modes.breakpoints() if p > modes.snr0]
        x = np.unique(np.concatenate([grid[grid > modes.snr0], pts]))
        mu, mode = effective_rate_mu(modes, x)
        success = modes.success_matrix(x)
        hull = upper_hull(x, mu)
        dx = np.diff(x[hull])
        slopes = np.diff(mu[hull]) / dx
        return cls(x, mu, mode.astype(np.int64), success, modes.rates, hull.astype(np.int64), slopes)

    def best_index(self, c: float, x_max: float = math.inf) -> int:
        """Grid index minimizing ``c*x - mu(x)`` subject to ``x <= x_max``.

        Ties resolve to the smallest SNR.  Requires ``c > 0``.
        """
        # first hull segment whose slope no longer beats the price c
        i = int(np.searchsorted(-self.hull_slopes, -c, side="left"))
        j = int(self.hull[i])
        if self.x[j] <= x_max:
            return j
        n = int(np.searchsorted(self.x, x_max, side="right"))
        vals = c * self.x[:n] - self.mu[:n]
        return int(np.argmin(vals))


def upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the non-decreasing part of the upper concave hull.

    ``x`` must be sorted increasingly.  Points on a hull edge are dropped.
    """
    idx: list[int] = []
    for i in range(len(x)):
        while len(idx) >= 2:
            i0, i1 = idx[-2], idx[-1]
            cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
            if cross >= 0:
                idx.pop()
            else:
                break
        idx.append(i)
    top = int(np.argmax(y[idx]))
    return np.array(idx[: top + 1], dtype=np.int64)
