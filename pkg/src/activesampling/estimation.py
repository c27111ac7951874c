"""Weighted total estimation, pooling over iterations, and variance estimation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import stats

from .characteristics import Characteristic
from .errors import BatchTooSmall
from .schemes import BatchDraw

FloatArray = npt.NDArray[np.float64]


class VarianceMethod(str, enum.Enum):
    DESIGN = "design"
    MARTINGALE = "martingale"
    BOOTSTRAP = "bootstrap"


def _as_matrix(responses) -> FloatArray:
    y = np.asarray(responses, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def hh_batch_total(draw: BatchDraw, responses) -> FloatArray:
    """``sum_i s_i y_i / mu_i`` over the selected elements only."""
    y = _as_matrix(responses)
    idx = draw.selected
    w = draw.counts[idx] / draw.expected_counts[idx]
    return w @ y[idx]


@dataclass(frozen=True)
class BatchRecord:
    """One iteration of the selection history.

    Only the selected elements are stored: ``indices`` with their counts,
    expected counts and (mapped) responses.
    """

    batch_size: int
    indices: npt.NDArray[np.intp]
    counts: npt.NDArray[np.int64]
    expected_counts: FloatArray
    responses: FloatArray
    batch_total: FloatArray

    @classmethod
    def from_draw(cls, draw: BatchDraw, responses) -> "BatchRecord":
        y = _as_matrix(responses)
        idx = draw.selected
        if np.any(draw.expected_counts <= 0):
            raise ValueError("expected counts must be strictly positive")
        return cls(
            batch_size=draw.batch_size,
            indices=idx,
            counts=draw.counts[idx],
            expected_counts=draw.expected_counts[idx],
            responses=y[idx],
            batch_total=hh_batch_total(draw, y),
        )

    @property
    def unit_values(self) -> FloatArray:
        """Per-selection values ``y_i / mu_i`` (one row per distinct element)."""
        return self.responses / self.expected_counts[:, None]


@dataclass
class SampleHistory:
    """Batch records ``j = 1..k`` of an adaptive multinomial design."""

    records: list[BatchRecord] = field(default_factory=list)

    def append(self, record: BatchRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def batch_sizes(self) -> npt.NDArray[np.int64]:
        return np.array([r.batch_size for r in self.records], dtype=np.int64)

    @property
    def total_size(self) -> int:
        return int(self.batch_sizes.sum()) if self.records else 0

    @property
    def batch_totals(self) -> FloatArray:
        return np.array([r.batch_total for r in self.records])

    def prefix(self, k: int) -> "SampleHistory":
        return SampleHistory(self.records[:k])

    def concat(self, other: "SampleHistory") -> "SampleHistory":
        return SampleHistory(self.records + other.records)


def pool_totals(history: SampleHistory) -> FloatArray:
    """Batch-size weighted average of the per-iteration totals."""
    if len(history) == 0:
        raise ValueError("history is empty")
    n = history.batch_sizes.astype(float)
    return (n @ history.batch_totals) / n.sum()


def pool_incrementally(history: SampleHistory) -> FloatArray:
    """Same as :func:`pool_totals`, via the running-update recursion."""
    m = 0
    pooled = np.zeros_like(history.records[0].batch_total)
    for rec in history.records:
        m_new = m + rec.batch_size
        pooled = (m * pooled + rec.batch_size * rec.batch_total) / m_new
        m = m_new
    return pooled


def syg_batch_cov(record: BatchRecord) -> FloatArray:
    """Sen-Yates-Grundy type estimate of the batch-total covariance."""
    n = record.batch_size
    if n < 2:
        raise BatchTooSmall("within-batch variance needs at least two selections")
    dev = record.unit_values - record.batch_total / n
    cov = (record.counts[:, None] * dev).T @ dev * (n / (n - 1))
    return 0.5 * (cov + cov.T)


def pooled_design_variance(history: SampleHistory) -> FloatArray:
    """``m^-2 sum_j n_j^2 Phi_j`` with a within-batch estimate per iteration."""
    m = history.total_size
    acc = None
    for j, rec in enumerate(history.records):
        try:
            phi = syg_batch_cov(rec)
        except BatchTooSmall as exc:
            raise BatchTooSmall(str(exc), iteration=j) from None
        term = rec.batch_size**2 * phi
        acc = term if acc is None else acc + term
    return acc / m**2


def martingale_variance(history: SampleHistory) -> FloatArray:
    """Squared variation of the batch totals around the pooled total.

    With a single iteration there is no variation to measure and the zero
    matrix is returned; see :func:`covariance_estimate` for the flag.
    """
    n = history.batch_sizes.astype(float)
    totals = history.batch_totals
    dev = totals - pool_totals(history)
    cov = (n[:, None] ** 2 * dev).T @ dev / n.sum() ** 2
    return 0.5 * (cov + cov.T)


def augmented_values(history: SampleHistory) -> FloatArray:
    """One row per selection: ``n_j * y_i / mu_ji = y_i / pi_ji``.

    Scaling each record by its own batch size keeps the pooled estimator
    equal to the plain mean of the augmented rows, whatever the batch sizes.
    """
    rows = [
        np.repeat(rec.batch_size * rec.unit_values, rec.counts, axis=0)
        for rec in history.records
    ]
    return np.concatenate(rows, axis=0)


def bootstrap_replicates(
    history: SampleHistory, B: int, rng: np.random.Generator
) -> FloatArray:
    values = augmented_values(history)
    m = values.shape[0]
    out = np.empty((B, values.shape[1]))
    # chunked to bound memory at large m
    chunk = max(1, min(B, 2_000_000 // max(m, 1)))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        idx = rng.integers(0, m, size=(stop - start, m))
        out[start:stop] = values[idx].mean(axis=1)
    return out


def bootstrap_variance(history: SampleHistory, B: int, rng: np.random.Generator) -> FloatArray:
    """Covariance of ``B`` bootstrap replicates of the pooled total."""
    if B < 2:
        raise ValueError("B must be at least 2")
    if history.total_size < 2:
        raise ValueError("bootstrap needs at least two selections")
    reps = bootstrap_replicates(history, B, rng)
    dev = reps - reps.mean(axis=0)
    cov = dev.T @ dev / (B - 1)
    return 0.5 * (cov + cov.T)


def covariance_estimate(
    history: SampleHistory,
    method: VarianceMethod | str,
    *,
    B: int = 1000,
    rng: np.random.Generator | None = None,
) -> tuple[FloatArray, bool]:
    """Dispatch to one of the three estimators.

    Returns ``(psi_hat, available)``; ``available`` is False when the
    estimator cannot say anything yet (martingale with one iteration).
    """
    method = VarianceMethod(method)
    if method is VarianceMethod.DESIGN:
        return pooled_design_variance(history), True
    if method is VarianceMethod.MARTINGALE:
        return martingale_variance(history), len(history) >= 2
    if rng is None:
        raise ValueError("bootstrap variance needs a random generator")
    return bootstrap_variance(history, B, rng), True


def delta_variance(c: Characteristic, pooled_totals, psi_hat) -> float:
    """``grad' Psi grad`` at the pooled totals, clamped at zero for rounding."""
    g = c.gradient(pooled_totals)
    psi = np.atleast_2d(np.asarray(psi_hat, dtype=float))
    v = float(g @ psi @ g)
    if v < 0:
        scale = float(np.abs(psi).max()) * float(g @ g)
        if -v > 1e-12 * max(scale, np.finfo(float).tiny):
            raise ValueError(f"covariance estimate is not PSD: quadratic form {v!r}")
        v = 0.0
    return v


def normal_quantile(alpha: float) -> float:
    """Upper ``alpha / 2`` standard normal quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(stats.norm.isf(alpha / 2.0))


def confidence_interval(theta_hat: float, variance_hat: float, alpha: float = 0.05):
    if variance_hat < 0:
        raise ValueError("variance must be nonnegative")
    half = normal_quantile(alpha) * math.sqrt(variance_hat)
    return theta_hat - half, theta_hat + half


@dataclass(frozen=True)
class PooledEstimate:
    pooled_totals: FloatArray
    theta_hat: float
    variance_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    method: VarianceMethod
    available: bool = True

    def covers(self, theta: float) -> bool:
        return self.ci_low <= theta <= self.ci_high


def estimate(
    history: SampleHistory,
    c: Characteristic,
    method: VarianceMethod | str = VarianceMethod.DESIGN,
    *,
    alpha: float = 0.05,
    B: int = 1000,
    rng: np.random.Generator | None = None,
) -> PooledEstimate:
    """Pooled point estimate, delta-method variance and normal interval.

    Raises :class:`DomainError` when ``h`` is undefined at the pooled totals.
    """
    method = VarianceMethod(method)
    totals = pool_totals(history)
    theta = c.value(totals)
    psi, available = covariance_estimate(history, method, B=B, rng=rng)
    var = delta_variance(c, totals, psi)
    lo, hi = confidence_interval(theta, var, alpha)
    return PooledEstimate(
        pooled_totals=totals,
        theta_hat=theta,
        variance_hat=var,
        std_error=math.sqrt(var),
        ci_low=lo,
        ci_high=hi,
        method=method,
        available=available,
    )

