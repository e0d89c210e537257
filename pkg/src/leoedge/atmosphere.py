"""Ground-level turbulence strength sampling and image-quality gating."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

DEFAULT_MEDIAN = 1.1e-14
DEFAULT_THRESHOLD = 2e-14
DEFAULT_ACCEPT_PROB = 0.65


def sigma_for_acceptance(median: float, threshold: float, accept_prob: float) -> float:
    """Log-spread placing ``accept_prob`` of a lognormal's mass below ``threshold``."""
    z = stats.norm.ppf(accept_prob)
    sigma = math.log(threshold / median) / z
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError("median, threshold and acceptance probability are inconsistent")
    return float(sigma)


DEFAULT_SIGMA_LN = sigma_for_acceptance(DEFAULT_MEDIAN, DEFAULT_THRESHOLD, DEFAULT_ACCEPT_PROB)


class TurbulenceConfigError(ValueError):
    pass


def load_cdf_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``cn2,cumulative_probability`` rows."""
    values, probs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = {"cn2", "cumulative_probability"} - set(reader.fieldnames or ())
        if missing:
            raise TurbulenceConfigError(f"{path}: missing CDF columns {sorted(missing)}")
        for row in reader:
            values.append(float(row["cn2"]))
            probs.append(float(row["cumulative_probability"]))
    return np.array(values), np.array(probs)


@dataclass
class TurbulenceModel:
    """C_n^2(0) distribution: lognormal by default, or a piecewise-linear empirical CDF.

    The model owns a seeded generator, so one instance corresponds to one
    independent random stream.
    """

    kind: str = "lognormal"
    median: float = DEFAULT_MEDIAN
    sigma_ln: float = DEFAULT_SIGMA_LN
    threshold: float = DEFAULT_THRESHOLD
    cdf_values: np.ndarray | None = None
    cdf_probs: np.ndarray | None = None
    rng_seed: int | None = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.threshold > 0:
            raise TurbulenceConfigError("threshold must be positive")
        if self.kind == "lognormal":
            if not (self.median > 0 and self.sigma_ln >= 0):
                raise TurbulenceConfigError("lognormal needs median > 0 and sigma_ln >= 0")
        elif self.kind == "empirical":
            if self.cdf_values is None or self.cdf_probs is None:
                raise TurbulenceConfigError("empirical model needs a loaded CDF table")
            v = np.asarray(self.cdf_values, dtype=float)
            p = np.asarray(self.cdf_probs, dtype=float)
            if v.shape != p.shape or len(v) < 2:
                raise TurbulenceConfigError("CDF table needs at least two matching points")
            if np.any(np.diff(v) < 0) or np.any(np.diff(p) < 0):
                raise TurbulenceConfigError("CDF table must be non-decreasing")
            if p[0] < 0 or p[-1] > 1 or v[0] < 0:
                raise TurbulenceConfigError("CDF probabilities must lie in [0, 1] and values be >= 0")
            self.cdf_values, self.cdf_probs = v, p
        else:
            raise TurbulenceConfigError(f"unknown turbulence model kind {self.kind!r}")
        self._rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def from_csv(cls, path, threshold: float = DEFAULT_THRESHOLD, rng_seed: int | None = 0):
        v, p = load_cdf_csv(path)
        return cls("empirical", threshold=threshold, cdf_values=v, cdf_probs=p, rng_seed=rng_seed)

    def reseed(self, seed: int | None) -> "TurbulenceModel":
        self.rng_seed = seed
        self._rng = np.random.default_rng(seed)
        return self

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "lognormal":
            return self.median * np.exp(self.sigma_ln * stats.norm.ppf(u))
        return np.interp(u, self.cdf_probs, self.cdf_values)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "lognormal":
            with np.errstate(divide="ignore"):
                z = np.log(np.maximum(x, 0.0) / self.median) / max(self.sigma_ln, 1e-300)
            return stats.norm.cdf(z)
        v, p = self.cdf_values, self.cdf_probs
        return np.where(x < v[0], 0.0, np.where(x >= v[-1], 1.0, _cdf_interp(x, v, p)))

    def mean(self) -> float:
        if self.kind == "lognormal":
            return self.median * math.exp(0.5 * self.sigma_ln**2)
        # mean of a piecewise-linear quantile function
        return float(np.trapezoid(self.cdf_values, self.cdf_probs) + self.cdf_values[0] * self.cdf_probs[0]
                     + self.cdf_values[-1] * (1 - self.cdf_probs[-1]))

    @property
    def acceptance_probability(self) -> float:
        return float(self.cdf(self.threshold))

    def sample_cn2(self, draws: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """I.i.d. draws from the model's own stream, or from ``rng`` when given."""
        if draws < 1:
            raise ValueError("draws must be >= 1")
        g = self._rng if rng is None else rng
        if self.kind == "lognormal":
            return self.median * np.exp(self.sigma_ln * g.standard_normal(draws))
        return self.quantile(g.uniform(size=draws))

    def gate_observation(self, cn2: float) -> bool:
        if cn2 < 0:
            raise ValueError("C_n^2 must be non-negative")
        return bool(cn2 <= self.threshold)


def _cdf_interp(x, v, p):
    # right-continuous CDF from the quantile table; flat segments jump to the upper probability
    idx = np.searchsorted(v, x, side="right")
    idx = np.clip(idx, 1, len(v) - 1)
    v0, v1 = v[idx - 1], v[idx]
    p0, p1 = p[idx - 1], p[idx]
    span = np.where(v1 > v0, v1 - v0, 1.0)
    return np.where(v1 > v0, p0 + (p1 - p0) * (x - v0) / span, p1)
