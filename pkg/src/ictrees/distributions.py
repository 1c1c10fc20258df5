"""Univariate leaf distributions.

``Qpd`` is a piecewise-uniform distribution whose breakpoints are empirical
quantiles. Intervals are right-open except the last one, which is closed.
``Multinomial`` is a frequency distribution over category codes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import DegenerateSupport

DEFAULT_RESOLUTION = 16


@dataclass(frozen=True)
class Qpd:
    breakpoints: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        w = np.array(self.masses, dtype=float)
        if b.ndim != 1 or w.ndim != 1 or b.size != w.size + 1 or w.size < 1:
            raise ValueError("need K >= 1 masses and K + 1 breakpoints")
        if not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(w > 0):
            raise ValueError("masses must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {w.sum()!r}, not 1")
        w = w / w.sum()
        b.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "masses", w)

    @property
    def n_intervals(self) -> int:
        return self.masses.size

    @property
    def lower(self) -> float:
        return float(self.breakpoints[0])

    @property
    def upper(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def densities(self) -> np.ndarray:
        return self.masses / np.diff(self.breakpoints)

    def interval_index(self, x) -> np.ndarray:
        """Index of the interval holding each ``x``, or -1 outside the support."""
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.breakpoints, x, side="right") - 1
        k = np.where(x == self.breakpoints[-1], self.n_intervals - 1, k)
        inside = (x >= self.breakpoints[0]) & (x <= self.breakpoints[-1])
        return np.where(inside, k, -1)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k = self.interval_index(x)
        out = np.where(k >= 0, self.densities[np.clip(k, 0, None)], 0.0)
        return out if out.ndim else float(out)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        k = self.interval_index(x)
        with np.errstate(divide="ignore"):
            log_dens = np.log(self.densities)
        out = np.where(k >= 0, log_dens[np.clip(k, 0, None)], -np.inf)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0
        out = np.interp(x, self.breakpoints, cum, left=0.0, right=1.0)
        return out if out.ndim else float(out)

    def ppf(self, u):
        """Generalised inverse of the cdf; exact on the piecewise-linear segments."""
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile levels must lie in [0, 1]")
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0
        k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, self.n_intervals - 1)
        frac = (u - cum[k]) / self.masses[k]
        out = self.breakpoints[k] + np.clip(frac, 0.0, 1.0) * (self.breakpoints[k + 1] - self.breakpoints[k])
        return out if out.ndim else float(out)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Pick an interval by mass, then a uniform point inside it."""
        if n < 0:
            raise ValueError("n must be non-negative")
        k = rng.choice(self.n_intervals, size=n, p=self.masses)
        lo = self.breakpoints[k]
        hi = self.breakpoints[k + 1]
        return lo + rng.random(n) * (hi - lo)

    def restrict(self, lo: float, hi: float) -> tuple[Optional["Qpd"], float]:
        """Keep, whole, every interval that meets ``[lo, hi]``.

        Returns the renormalised distribution (``None`` when nothing meets the
        range) and the mass retained before renormalisation.
        """
        if lo > hi:
            raise ValueError("lo must not exceed hi")
        b = self.breakpoints
        meets = (b[:-1] <= hi) & (b[1:] > lo)
        meets[-1] = b[-2] <= hi and b[-1] >= lo
        if not meets.any():
            return None, 0.0
        first = int(np.argmax(meets))
        last = int(len(meets) - 1 - np.argmax(meets[::-1]))
        kept = self.masses[first : last + 1]
        retained = float(kept.sum())
        return Qpd(b[first : last + 2], kept / retained), retained

    def max_density_intervals(self, rtol: float = 1e-12) -> list[tuple[float, float, float]]:
        """All intervals attaining the maximal density, ties included."""
        dens = self.densities
        top = dens.max()
        hits = np.flatnonzero(dens >= top * (1.0 - rtol))
        return [(float(self.breakpoints[k]), float(self.breakpoints[k + 1]), float(dens[k])) for k in hits]

    def param_count(self) -> int:
        # K + 1 breakpoints plus K - 1 free masses
        return 2 * self.n_intervals

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "masses": self.masses.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Qpd":
        return cls(np.asarray(d["breakpoints"], dtype=float), np.asarray(d["masses"], dtype=float))


def qpd_fit(samples, resolution: int = DEFAULT_RESOLUTION) -> Qpd:
    """Fit a piecewise-uniform distribution on the empirical quantiles at levels k / resolution.

    Coincident quantiles are merged; the mass of a zero-width interval is
    pooled into the next interval of positive width (or the previous one at
    the top end).

    Raises
    ------
    DegenerateSupport
        If all samples are equal.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 2:
        raise ValueError("need at least two samples")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    lo, hi = samples.min(), samples.max()
    if lo == hi:
        raise DegenerateSupport(f"all samples equal {lo!r}")
    q = np.quantile(samples, np.linspace(0.0, 1.0, resolution + 1))
    q[0], q[-1] = lo, hi
    q = np.maximum.accumulate(q)

    breaks = [q[0]]
    masses: list[float] = []
    pending = 0.0
    step = 1.0 / resolution
    for k in range(resolution):
        pending += step
        if q[k + 1] > breaks[-1]:
            breaks.append(q[k + 1])
            masses.append(pending)
            pending = 0.0
    if pending > 0.0:
        masses[-1] += pending
    masses_arr = np.asarray(masses)
    return Qpd(np.asarray(breaks), masses_arr / masses_arr.sum())


@dataclass(frozen=True)
class Multinomial:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0):
            raise ValueError("probabilities must be a non-negative vector")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_categories(self) -> int:
        return self.probs.size

    def pmf(self, codes):
        codes = np.asarray(codes)
        out = self.probs[codes.astype(int)]
        return out if out.ndim else float(out)

    def log_pmf(self, codes):
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(codes))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.n_categories, size=n, p=self.probs)

    def restrict(self, allowed: Iterable[int]) -> tuple[Optional["Multinomial"], float]:
        """Zero out disallowed categories; ``(None, 0.0)`` when no mass is left."""
        mask = np.zeros(self.n_categories, dtype=bool)
        mask[list(allowed)] = True
        kept = np.where(mask, self.probs, 0.0)
        retained = float(kept.sum())
        if retained <= 0.0:
            return None, 0.0
        return Multinomial(kept / retained), retained

    def mode(self) -> list[int]:
        top = self.probs.max()
        return [int(k) for k in np.flatnonzero(self.probs == top)]

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Multinomial":
        return cls(np.asarray(d["probs"], dtype=float))


def multinomial_fit(codes, n_categories: int) -> Multinomial:
    counts = np.bincount(np.asarray(codes, dtype=int), minlength=n_categories).astype(float)
    if counts.sum() == 0:
        raise ValueError("cannot fit a multinomial on zero observations")
    return Multinomial(counts / counts.sum())
