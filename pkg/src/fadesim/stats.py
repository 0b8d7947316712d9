"""Agreement measures between predicted and measured thresholds."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UndefinedCorrelationError


@dataclass(frozen=True)
class PairedSeries:
    """Predicted (``sim``) and measured (``emp``) values per item, in dB."""

    sim: tuple
    emp: tuple
    sigma_sim: tuple
    sigma_emp: tuple
    labels: tuple = ()

    def __post_init__(self):
        for name in ("sim", "emp", "sigma_sim", "sigma_emp"):
            v = tuple(float(x) for x in getattr(self, name))
            if not all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, v)
        n = len(self.sim)
        if not (len(self.emp) == len(self.sigma_sim) == len(self.sigma_emp) == n):
            raise ValueError("paired series fields must have equal lengths")
        if any(s < 0 for s in self.sigma_sim + self.sigma_emp):
            raise ValueError("standard deviations must be non-negative")
        labels = tuple(str(x) for x in self.labels) or tuple(str(i) for i in range(n))
        if len(labels) != n:
            raise ValueError("one label per item required")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.sim)

    def diffs(self) -> np.ndarray:
        return np.asarray(self.sim) - np.asarray(self.emp)


@dataclass(frozen=True)
class EvalSummary:
    pearson_r: float
    rms_db: float
    bias_db: float  # mean(sim - emp)
    regression_intercept_db: float  # intercept of sim regressed on emp
    regression_slope: float
    chi2_per_dof: float
    dof: int
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def sem(sigma: float, n: int) -> float:
    """Standard error of a mean of ``n`` values with spread ``sigma``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return sigma / np.sqrt(n)


def chi2_per_dof(s: PairedSeries, nu: int) -> float:
    """Squared differences weighted by the combined variance, divided by ``nu``."""
    if nu < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {nu}")
    var = np.square(s.sigma_emp) + np.square(s.sigma_sim)
    for label, v in zip(s.labels, var):
        if v <= 0:
            raise ValueError(f"item {label!r} has zero combined variance")
    return float(np.sum(s.diffs() ** 2 / var) / nu)


def pearson_r(s: PairedSeries) -> float:
    if len(s) < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 items")
    x = np.asarray(s.sim) - np.mean(s.sim)
    y = np.asarray(s.emp) - np.mean(s.emp)
    sxx, syy = float(x @ x), float(y @ y)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip((x @ y) / np.sqrt(sxx * syy), -1.0, 1.0))


def rms_and_bias(s: PairedSeries) -> tuple[float, float]:
    if len(s) == 0:
        raise ValueError("empty series")
    d = s.diffs()
    return float(np.sqrt(np.mean(d**2))), float(np.mean(d))


def regression_line(s: PairedSeries) -> tuple[float, float]:
    """Least-squares ``sim = slope * emp + intercept``."""
    emp = np.asarray(s.emp)
    if len(s) < 2 or np.all(emp == emp[0]):
        raise UndefinedCorrelationError("regression needs at least 2 distinct measured values")
    slope, intercept = np.polyfit(emp, np.asarray(s.sim), 1)
    return float(slope), float(intercept)


def evaluate_series(s: PairedSeries, nu: int) -> EvalSummary:
    rms, bias = rms_and_bias(s)
    slope, intercept = regression_line(s)
    return EvalSummary(
        pearson_r=pearson_r(s),
        rms_db=rms,
        bias_db=bias,
        regression_intercept_db=intercept,
        regression_slope=slope,
        chi2_per_dof=chi2_per_dof(s, nu),
        dof=int(nu),
        n=len(s),
    )


def lombard_gain(srt_plain: float, srt_lombard: float) -> float:
    """Threshold improvement of Lombard over plain speech (positive = easier)."""
    if not (np.isfinite(srt_plain) and np.isfinite(srt_lombard)):
        raise ValueError("SRTs must be finite")
    return float(srt_plain - srt_lombard)


def listener_gains(plain, lombard) -> tuple[float, float]:
    """Mean and standard error of per-listener gains.

    ``plain`` and ``lombard`` hold one SRT per listener in the same order.
    The spread uses the sample standard deviation.
    """
    plain = np.asarray(plain, dtype=np.float64)
    lombard = np.asarray(lombard, dtype=np.float64)
    if plain.shape != lombard.shape or plain.ndim != 1 or plain.size == 0:
        raise ValueError("need matching non-empty per-listener SRT lists")
    gains = np.array([lombard_gain(p, q) for p, q in zip(plain, lombard)])
    spread = float(np.std(gains, ddof=1)) if gains.size > 1 else 0.0
    return float(gains.mean()), sem(spread, gains.size)


def combined_gain_sigma(sigma_plain: float, sigma_lombard: float) -> float:
    """Uncertainty of a difference of two independent estimates."""
    return float(np.hypot(sigma_plain, sigma_lombard))
