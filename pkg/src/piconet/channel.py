"""Block-fading channel power gains.

The default law is a Ricean amplitude squared (unit mean before truncation),
truncated below at ``s_min`` by rejection.  A finite discrete law is also
provided for brute-force checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, stats

from .numerics import bessel_i0e


@dataclass(frozen=True)
class ChannelModel:
    """Truncated Ricean fading.  ``rice_factor_db = inf`` gives ``S = 1``."""

    rice_factor_db: float = 6.95
    s_min: float = 0.01

    def __post_init__(self):
        if not self.s_min > 0:
            raise ValueError("s_min must be positive")
        if math.isinf(self.rice_factor_db) and self.s_min > 1.0:
            raise ValueError("s_min exceeds the deterministic gain 1")

    @property
    def deterministic(self) -> bool:
        return math.isinf(self.rice_factor_db) and self.rice_factor_db > 0

    @property
    def rice_factor(self) -> float:
        return 10.0 ** (self.rice_factor_db / 10.0)

    @cached_property
    def _ncx2(self):
        k = self.rice_factor
        return stats.ncx2(df=2, nc=2.0 * k, scale=1.0 / (2.0 * (k + 1.0)))

    @cached_property
    def retained_mass(self) -> float:
        """``P(S >= s_min)`` of the untruncated law."""
        if self.deterministic:
            return 1.0
        return float(self._ncx2.sf(self.s_min))

    @cached_property
    def _tail_point(self) -> float:
        # beyond this gain the untruncated tail mass is below 1e-15
        return float(self._ncx2.isf(1e-15))

    def untruncated_pdf(self, s):
        s = np.asarray(s, dtype=float)
        k = self.rice_factor
        arg = 2.0 * np.sqrt(k * (k + 1.0) * np.maximum(s, 0.0))
        # exp(-K - (K+1)s) I0(arg) written with the scaled Bessel function
        out = (k + 1.0) * np.exp(-k - (k + 1.0) * s + arg) * bessel_i0e(arg)
        return np.where(s >= 0, out, 0.0)

    def pdf(self, s):
        if self.deterministic:
            raise ValueError("deterministic channel has no density")
        s = np.asarray(s, dtype=float)
        out = np.where(s >= self.s_min, self.untruncated_pdf(s) / self.retained_mass, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.deterministic:
            out = (s >= 1.0).astype(float)
        else:
            lo = self._ncx2.cdf(self.s_min)
            out = np.clip((self._ncx2.cdf(np.maximum(s, self.s_min)) - lo) / self.retained_mass, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, k_sensors: int, n: int | None = None) -> np.ndarray:
        """Gains of shape ``(k_sensors,)`` or ``(n, k_sensors)``, all ``>= s_min``."""
        if k_sensors < 1:
            raise ValueError("k_sensors must be >= 1")
        shape = (k_sensors,) if n is None else (n, k_sensors)
        if self.deterministic:
            return np.ones(shape)
        k = self.rice_factor
        scale = 1.0 / (2.0 * (k + 1.0))
        out = rng.noncentral_chisquare(2.0, 2.0 * k, size=shape) * scale
        bad = out < self.s_min
        while np.any(bad):
            out[bad] = rng.noncentral_chisquare(2.0, 2.0 * k, size=int(bad.sum())) * scale
            bad = out < self.s_min
        return out

    def expect(self, g, lo: float | None = None, hi: float = math.inf) -> float:
        """``E[g(S); lo <= S < hi]`` by adaptive quadrature."""
        lo = self.s_min if lo is None else max(lo, self.s_min)
        if self.deterministic:
            return float(g(1.0)) if lo <= 1.0 < hi else 0.0
        if not hi > lo:
            return 0.0
        # split at the bulk of the density so quad resolves the peak
        pts = [p for p in (0.5, 1.0, 2.0, 4.0, self._tail_point) if lo < p < hi]
        edges = [lo] + pts + [hi]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(
                lambda s: g(s) * self.pdf(s), a, b, epsabs=1e-13, epsrel=1e-11, limit=200
            )
            total += val
        return total

    def prob(self, lo: float, hi: float = math.inf) -> float:
        """``P(lo <= S < hi)``."""
        if self.deterministic:
            return 1.0 if lo <= 1.0 < hi else 0.0
        return float(self.cdf(hi) - self.cdf(max(lo, self.s_min)))

    @cached_property
    def _mean_inverse(self) -> float:
        return self.expect(lambda s: 1.0 / s)

    def mean_inverse_gain(self) -> float:
        """``E[1/S]``; finite because of the truncation."""
        return self._mean_inverse


def mean_inverse_gain(model: ChannelModel) -> float:
    return model.mean_inverse_gain()


@dataclass(frozen=True)
class DiscreteChannel:
    """Finite channel law: gain ``values[i]`` with probability ``probs[i]``."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise ValueError("values and probs must be equal-length 1-D sequences")
        if np.any(v <= 0) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("gains must be positive and probabilities sum to 1")

    @property
    def s_min(self) -> float:
        return float(min(self.values))

    def sample(self, rng: np.random.Generator, k_sensors: int, n: int | None = None) -> np.ndarray:
        shape = (k_sensors,) if n is None else (n, k_sensors)
        return rng.choice(np.asarray(self.values), size=shape, p=np.asarray(self.probs))

    def mean_inverse_gain(self) -> float:
        return float(np.dot(self.probs, 1.0 / np.asarray(self.values)))

    def expect(self, g, lo: float | None = None, hi: float = math.inf) -> float:
        lo = -math.inf if lo is None else lo
        return float(sum(p * g(v) for v, p in zip(self.values, self.probs) if lo <= v < hi))

    def prob(self, lo: float, hi: float = math.inf) -> float:
        return float(sum(p for v, p in zip(self.values, self.probs) if lo <= v < hi))
