"""Processor models: BSP execution time, cubic power law and stochastic runtimes."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

logger = logging.getLogger(__name__)


class DomainError(ValueError):
    """Clock frequency outside ``(0, f_max]``."""


class InfeasibleLoadError(ValueError):
    """Requested per-slot load cannot be processed by the platform."""


class FitError(ValueError):
    """Execution-time logs are unsuitable for a Gamma fit."""


@dataclass(frozen=True)
class PlatformSpec:
    id: str
    n_cores: int
    f_max: float  # Hz
    p_max: float  # W
    flops_per_cycle: float
    mu_c: float
    mu_sync: float = 0.0  # s
    kind: str = "satellite"

    def __post_init__(self):
        for name in ("n_cores", "f_max", "p_max", "flops_per_cycle", "mu_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu_sync < 0:
            raise ValueError("mu_sync must be non-negative")
        if self.kind not in ("satellite", "ground"):
            raise ValueError(f"kind must be 'satellite' or 'ground', got {self.kind!r}")

    @property
    def peak_flops(self) -> float:
        return self.n_cores * self.flops_per_cycle


PLATFORMS: dict[str, PlatformSpec] = {
    "cloud_cpu": PlatformSpec("cloud_cpu", 64, 2.6e9, 280.0, 32, 1.079, 0.0, "ground"),
    "sat_cpu": PlatformSpec("sat_cpu", 8, 1.8e9, 6.0, 32, 1.079, 0.0),
    "nano": PlatformSpec("nano", 1024, 1.02e9, 25.0, 2, 1.071, 17.48e-3),
    "agx": PlatformSpec("agx", 2048, 1.3e9, 60.0, 2, 1.122, 14.14e-3),
}


@dataclass(frozen=True)
class WorkloadSpec:
    """Per-image work (FLOPs), compression ratio and compressed size (bits)."""

    work: float = 79.1e9
    rho: float = 2346.0
    semantic_bits_per_image: float | None = None
    img_bits: float = 788_513.0

    def __post_init__(self):
        if self.work <= 0:
            raise ValueError("work must be positive")
        if self.rho < 1:
            raise ValueError(f"compression ratio must be >= 1, got {self.rho}")
        if self.semantic_bits_per_image is None:
            object.__setattr__(self, "semantic_bits_per_image", self.img_bits / self.rho)


def _check_f(p: PlatformSpec, f):
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0) or np.any(f > p.f_max * (1 + 1e-12)):
        raise DomainError(f"frequency must lie in (0, {p.f_max:g}] Hz for {p.id}")
    return f


def mean_exec_time(p: PlatformSpec, f, w: WorkloadSpec):
    """Mean seconds per image: work term plus synchronisation overhead."""
    f = _check_f(p, f)
    out = p.mu_c * w.work / (p.peak_flops * f) + p.mu_sync
    return float(out) if out.ndim == 0 else out


def max_fps(p: PlatformSpec, w: WorkloadSpec) -> float:
    return 1.0 / mean_exec_time(p, p.f_max, w)


def power_at(p: PlatformSpec, f):
    f = _check_f(p, f)
    out = p.p_max * (f / p.f_max) ** 3
    return float(out) if out.ndim == 0 else out


def energy_per_image(p: PlatformSpec, f, w: WorkloadSpec):
    return power_at(p, f) * mean_exec_time(p, f, w)


def optimal_frequency(p: PlatformSpec, w: WorkloadSpec, images_per_slot: float, t_slot: float) -> float:
    """Lowest clock that still finishes ``images_per_slot`` images within the slot."""
    if images_per_slot <= 0:
        raise ValueError("images_per_slot must be positive")
    budget = t_slot / images_per_slot - p.mu_sync
    if budget <= 0:
        raise InfeasibleLoadError(
            f"{p.id}: {images_per_slot:g} images leave no time beyond synchronisation in {t_slot:g} s"
        )
    f = p.mu_c * w.work / (p.peak_flops * budget)
    if f > p.f_max * (1 + 1e-12):
        raise InfeasibleLoadError(f"{p.id}: needs {f / 1e9:.4f} GHz > f_max {p.f_max / 1e9:.4f} GHz")
    return min(f, p.f_max)


# --- stochastic execution time -------------------------------------------------


@dataclass(frozen=True)
class ExecTimeModel:
    """Gamma shape and scale as cubic polynomials of the clock frequency (GHz)."""

    alpha_coef: tuple[float, ...]
    theta_coef: tuple[float, ...]
    f_range: tuple[float, float]  # Hz
    residuals: dict = field(default_factory=dict, compare=False)
    platform_id: str = ""

    def alpha(self, f):
        return np.polyval(self.alpha_coef, np.asarray(f, dtype=float) / 1e9)

    def theta(self, f):
        return np.polyval(self.theta_coef, np.asarray(f, dtype=float) / 1e9)

    def mean(self, f):
        return self.alpha(f) * self.theta(f)

    def variance(self, f):
        return self.alpha(f) * self.theta(f) ** 2

    def cv(self, f):
        return 1.0 / np.sqrt(self.alpha(f))

    def clamp(self, f: float) -> float:
        return float(min(max(f, self.f_range[0]), self.f_range[1]))

    def to_json(self) -> str:
        return json.dumps({
            "platform_id": self.platform_id,
            "alpha_coef": list(self.alpha_coef),
            "theta_coef": list(self.theta_coef),
            "f_range": list(self.f_range),
            "frequency_unit": "GHz",
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExecTimeModel":
        d = json.loads(text)
        return cls(tuple(d["alpha_coef"]), tuple(d["theta_coef"]), tuple(d["f_range"]), {}, d.get("platform_id", ""))


def gamma_moments(samples: np.ndarray) -> tuple[float, float]:
    """Method-of-moments shape and scale."""
    m = float(np.mean(samples))
    v = float(np.var(samples, ddof=1))
    if not v > 0 or not m > 0:
        raise FitError("samples need a positive mean and non-zero variance")
    return m * m / v, v / m


def fit_exec_model(freqs, times, *, degree: int = 3, min_samples: int = 30, min_freqs: int = 4,
                   platform_id: str = "") -> ExecTimeModel:
    """Per-frequency moment fit followed by polynomial regression of shape and scale."""
    freqs = np.asarray(freqs, dtype=float)
    times = np.asarray(times, dtype=float)
    levels = np.unique(freqs)
    if len(levels) < min_freqs:
        raise FitError(f"need at least {min_freqs} distinct frequencies, got {len(levels)}")
    a_hat, t_hat = [], []
    for f in levels:
        s = times[freqs == f]
        if len(s) < min_samples:
            raise FitError(f"need {min_samples} samples at {f:g} Hz, got {len(s)}")
        a, t = gamma_moments(s)
        a_hat.append(a)
        t_hat.append(t)
    x = levels / 1e9
    deg = min(degree, len(levels) - 1)
    ca = np.polyfit(x, a_hat, deg)
    ct = np.polyfit(x, t_hat, deg)
    res = {
        "frequencies": levels.tolist(),
        "alpha_points": a_hat,
        "theta_points": t_hat,
        "alpha_rms": float(np.sqrt(np.mean((np.polyval(ca, x) - a_hat) ** 2))),
        "theta_rms": float(np.sqrt(np.mean((np.polyval(ct, x) - t_hat) ** 2))),
    }
    model = ExecTimeModel(tuple(ca), tuple(ct), (float(levels[0]), float(levels[-1])), res, platform_id)
    grid = np.linspace(levels[0], levels[-1], 64)
    if np.any(model.alpha(grid) <= 0) or np.any(model.theta(grid) <= 0):
        raise FitError("regressed Gamma parameters are not positive over the fitted range")
    return model


class GammaExecTimeModel(BaseEstimator, RegressorMixin):
    """Estimator wrapper: ``fit(frequencies, times)``, ``predict(frequencies)`` gives mean seconds."""

    def __init__(self, degree: int = 3, min_samples: int = 30, min_freqs: int = 4):
        self.degree = degree
        self.min_samples = min_samples
        self.min_freqs = min_freqs

    def fit(self, X, y):
        f = np.asarray(X, dtype=float).reshape(-1)
        self.model_ = fit_exec_model(f, y, degree=self.degree, min_samples=self.min_samples,
                                     min_freqs=self.min_freqs)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.mean(np.asarray(X, dtype=float).reshape(-1))

    def predict_distribution(self, f: float, n_img: int = 1) -> "BatchExecDistribution":
        check_is_fitted(self, "model_")
        return batch_exec_distribution(self.model_, f, n_img)


@dataclass(frozen=True)
class BatchExecDistribution:
    """Runtime of a batch of i.i.d. images: exact Gamma sum and its normal approximation."""

    shape: float
    scale: float

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2

    def quantile(self, q):
        return stats.gamma.ppf(q, self.shape, scale=self.scale)

    def normal_quantile(self, q):
        return stats.norm.ppf(q, loc=self.mean, scale=math.sqrt(self.variance))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size=size)


def batch_exec_distribution(model: ExecTimeModel, f: float, n_img: int) -> BatchExecDistribution:
    if n_img < 1:
        raise ValueError("n_img must be >= 1")
    return BatchExecDistribution(float(n_img * model.alpha(f)), float(model.theta(f)))


def moment_matched_batch(mean_per_image: float, cv_per_image: float, n_img: int) -> BatchExecDistribution:
    """Gamma batch law from a per-image mean and coefficient of variation."""
    alpha = 1.0 / cv_per_image**2
    return BatchExecDistribution(n_img * alpha, mean_per_image / alpha)


# --- synthetic logs ----------------------------------------------------------------


REFERENCE_DEVIATION = 0.017
REFERENCE_SLOT = 10.0


def calibrated_cv(p: PlatformSpec, w: WorkloadSpec, *, deviation: float = REFERENCE_DEVIATION,
                  slot: float = REFERENCE_SLOT, q: float = 0.95) -> float:
    """Per-image CV at f_max so a slot-filling batch has 5th/95th quantiles at ``deviation``."""
    n = max(1.0, slot / mean_exec_time(p, p.f_max, w))
    return deviation * math.sqrt(n) / stats.norm.ppf(q)


def synthetic_cv(p: PlatformSpec, w: WorkloadSpec, f, *, cv_fmax: float | None = None,
                 exponent: float = 0.5):
    """CV law used by the synthetic logs: ``cv_fmax * (f / f_max) ** exponent``."""
    cv0 = calibrated_cv(p, w) if cv_fmax is None else cv_fmax
    return cv0 * (np.asarray(f, dtype=float) / p.f_max) ** exponent


def synthetic_exec_logs(p: PlatformSpec, w: WorkloadSpec, freqs: Sequence[float], n_per_freq: int,
                        rng: np.random.Generator, *, cv_fmax: float | None = None,
                        exponent: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Gamma runtimes whose mean follows the BSP model; returns (frequency, seconds) arrays."""
    fs, ts = [], []
    for f in freqs:
        mu = mean_exec_time(p, f, w)
        cv = float(synthetic_cv(p, w, f, cv_fmax=cv_fmax, exponent=exponent))
        alpha = 1.0 / cv**2
        ts.append(rng.gamma(alpha, mu / alpha, size=n_per_freq))
        fs.append(np.full(n_per_freq, float(f)))
    return np.concatenate(fs), np.concatenate(ts)


def default_exec_model(p: PlatformSpec, w: WorkloadSpec, *, seed: int = 0, n_per_freq: int = 4000,
                       n_freqs: int = 8, low: float = 0.25) -> ExecTimeModel:
    """Fit a model to synthetic logs spanning ``[low * f_max, f_max]``."""
    rng = np.random.default_rng(seed)
    freqs = np.linspace(low * p.f_max, p.f_max, n_freqs)
    f, t = synthetic_exec_logs(p, w, freqs, n_per_freq, rng)
    return fit_exec_model(f, t, platform_id=p.id)


def load_exec_logs(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with columns ``frequency_hz, exec_time_s``."""
    f, t = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f.append(float(row["frequency_hz"]))
            t.append(float(row["exec_time_s"]))
    return np.array(f), np.array(t)


def save_exec_logs(path, freqs, times) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_hz", "exec_time_s"])
        for f, t in zip(freqs, times):
            w.writerow([repr(float(f)), repr(float(t))])
