"""Sampling schemes for multinomial (with-replacement) designs.

Optimal schemes put ``pi_i`` proportional to ``sqrt(c_i)`` for per-element
importance scores ``c_i``; that choice minimises ``sum_i c_i / pi_i`` under
``sum_i pi_i = 1``. Returned schemes are mixed with the uniform scheme so
that every probability stays bounded away from zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.linalg import qr

from .characteristics import Population
from .errors import DegenerateScheme, SingularDesign

FloatArray = npt.NDArray[np.float64]

DEFAULT_EPSILON = 1e-3
SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class SamplingScheme:
    """Strictly positive selection probabilities summing to one."""

    probabilities: FloatArray

    def __post_init__(self) -> None:
        pi = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if pi.size < 1 or not np.all(np.isfinite(pi)) or not np.all(pi > 0):
            raise ValueError("scheme probabilities must be finite and strictly positive")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"scheme probabilities sum to {pi.sum()!r}, not 1")
        pi.setflags(write=False)
        object.__setattr__(self, "probabilities", pi)

    @property
    def size(self) -> int:
        return self.probabilities.size

    def total_variation(self, other: "SamplingScheme | FloatArray") -> float:
        q = other.probabilities if isinstance(other, SamplingScheme) else np.asarray(other)
        return 0.5 * float(np.abs(self.probabilities - q).sum())


@dataclass(frozen=True)
class BatchDraw:
    """One multinomial batch: counts ``s_i`` and expected counts ``n * pi_i``."""

    counts: npt.NDArray[np.int64]
    expected_counts: FloatArray

    @property
    def batch_size(self) -> int:
        return int(self.counts.sum())

    @property
    def selected(self) -> npt.NDArray[np.intp]:
        return np.flatnonzero(self.counts)


def _normalise(weights: FloatArray) -> FloatArray:
    pi = weights / weights.sum()
    # one more pass pulls the sum to within a couple of ulps of 1
    return pi / pi.sum()


def floor_mix(pi: FloatArray, epsilon: float = DEFAULT_EPSILON) -> FloatArray:
    """Mix with uniform: ``(1 - eps) * pi + eps / N``, then renormalise."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    pi = np.asarray(pi, dtype=float)
    return _normalise((1.0 - epsilon) * pi + epsilon / pi.size)


def closed_form_optimum(scores) -> FloatArray:
    """``sqrt(c_i) / sum_j sqrt(c_j)`` with no flooring."""
    c = np.asarray(scores, dtype=float).reshape(-1)
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("scores must be finite and nonnegative")
    root = np.sqrt(c)
    total = root.sum()
    if total == 0.0:
        raise DegenerateScheme("all importance scores are zero")
    return root / total


def scheme_from_scores(scores, epsilon: float = DEFAULT_EPSILON) -> SamplingScheme:
    return SamplingScheme(floor_mix(closed_form_optimum(scores), epsilon))


def scheme_from_weights(weights, epsilon: float = 0.0) -> SamplingScheme:
    """Scheme proportional to nonnegative ``weights`` (optionally floored)."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be finite, nonnegative and not all zero")
    return SamplingScheme(floor_mix(_normalise(w), epsilon))


def uniform_scheme(size: int) -> SamplingScheme:
    return SamplingScheme(np.full(size, 1.0 / size))


def known_scores(responses, grad) -> FloatArray:
    y = np.asarray(responses, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    g = np.asarray(grad, dtype=float).reshape(-1)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    return (y @ g) ** 2


def predictive_scores(means, covariances, grad) -> FloatArray:
    eta = np.asarray(means, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    g = np.asarray(grad, dtype=float).reshape(-1)
    cov = np.asarray(covariances, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None, None]
    if cov.shape != (eta.shape[0], g.size, g.size):
        raise ValueError(f"covariances must have shape (N, d, d), got {cov.shape}")
    spread = np.einsum("j,ijk,k->i", g, cov, g)
    return known_scores(eta, g) + spread


def optimal_scheme_known(responses, grad, epsilon: float = DEFAULT_EPSILON) -> SamplingScheme:
    """Optimal scheme when every response vector is known."""
    return scheme_from_scores(known_scores(responses, grad), epsilon)


def optimal_scheme_predictive(
    means, covariances, grad, epsilon: float = DEFAULT_EPSILON
) -> SamplingScheme:
    """Optimal scheme when responses are random with the given moments.

    The score ``(g'eta_i)^2 + g' Sigma_i g`` is the expected squared
    linearised contribution of element ``i``.
    """
    return scheme_from_scores(predictive_scores(means, covariances, grad), epsilon)


def application_scores(p, crash_prob, pred, resid_sd, theta_prev: float) -> FloatArray:
    p = np.asarray(p, dtype=float)
    r = np.asarray(crash_prob, dtype=float)
    x = np.asarray(pred, dtype=float)
    s = np.asarray(resid_sd, dtype=float)
    if not (p.shape == r.shape == x.shape == s.shape):
        raise ValueError("inputs must share one shape")
    if np.any(r < 0) or np.any(r > 1) or np.any(s < 0):
        raise ValueError("crash_prob must lie in [0, 1] and resid_sd must be nonnegative")
    return p**2 * r * ((x - theta_prev) ** 2 + s**2)


def application_scheme(
    p, crash_prob, pred, resid_sd, theta_prev: float, epsilon: float = DEFAULT_EPSILON
) -> SamplingScheme:
    """Optimal scheme for a ratio of weighted totals with a two-part model.

    The event probability ``crash_prob`` and the conditional outcome model
    (``pred``, ``resid_sd``) are combined around the previous estimate.
    """
    return scheme_from_scores(
        application_scores(p, crash_prob, pred, resid_sd, theta_prev), epsilon
    )


class BaselineKind(str, enum.Enum):
    UNIFORM = "uniform"
    PROPORTIONAL_TO_AUX = "aux"
    DENSITY = "density"
    SEVERITY = "severity"
    LEVERAGE = "leverage"


def unit_interval_map(values, low: float = 0.1, high: float = 1.0, descending: bool = False):
    """Affinely map ``values`` onto ``[low, high]``; constants map to ``high``."""
    v = np.asarray(values, dtype=float)
    span = v.max() - v.min()
    if span == 0:
        return np.full_like(v, high)
    frac = (v - v.min()) / span
    if descending:
        frac = 1.0 - frac
    return low + (high - low) * frac


def leverage_scores(aux, weights) -> FloatArray:
    """Diagonal of ``W^1/2 Z (Z'WZ)^-1 Z' W^1/2`` with Z rows ``(1, z_i)``."""
    z = np.asarray(aux, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    w = np.asarray(weights, dtype=float).reshape(-1)
    design = np.sqrt(w)[:, None] * np.column_stack([np.ones(z.shape[0]), z])
    # column-pivoted QR; the hat matrix is Q Q' on the retained columns
    q, r, _ = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() == 0 or (diag.max() / diag.min()) ** 2 > SINGULAR_CONDITION:
        raise SingularDesign("weighted design matrix is numerically singular")
    return np.einsum("ij,ij->i", q, q)


def baseline_scheme(
    kind: BaselineKind | str,
    pop: Population,
    *,
    aux_column: int | str = 0,
    severity_factors: tuple[tuple[str, bool], ...] | None = None,
    leverage_columns: tuple[int | str, ...] | None = None,
) -> SamplingScheme:
    """Non-adaptive benchmark schemes.

    ``severity_factors`` lists ``(aux_name, descending)`` pairs; each factor
    is mapped onto [0.1, 1] (reversed when ``descending``) and multiplied
    with the prior weight.
    """
    kind = BaselineKind(kind)
    n = pop.size
    if kind is BaselineKind.UNIFORM:
        return uniform_scheme(n)
    if kind is BaselineKind.DENSITY:
        return scheme_from_weights(pop.weights)
    if kind is BaselineKind.PROPORTIONAL_TO_AUX:
        col = _column(pop, aux_column)
        if not np.all(col > 0):
            raise ValueError("proportional-to-aux sampling needs a strictly positive auxiliary")
        return scheme_from_weights(col)
    if kind is BaselineKind.SEVERITY:
        if not severity_factors:
            raise ValueError("severity sampling needs named severity factors")
        product = pop.weights.copy()
        for name, descending in severity_factors:
            product *= unit_interval_map(pop.aux_column(name), descending=descending)
        return scheme_from_weights(product)
    if kind is BaselineKind.LEVERAGE:
        if pop.auxiliaries.shape[1] < 1 or pop.prior_weights is None:
            raise ValueError("leverage sampling needs auxiliaries and prior weights")
        if leverage_columns is None:
            z = pop.auxiliaries
        else:
            z = np.column_stack([_column(pop, c) for c in leverage_columns])
        return scheme_from_weights(leverage_scores(z, pop.prior_weights))
    raise ValueError(kind)  # pragma: no cover


def _column(pop: Population, col: int | str) -> FloatArray:
    if isinstance(col, str):
        return pop.aux_column(col)
    return pop.auxiliaries[:, col]


def draw_multinomial(scheme: SamplingScheme, n: int, rng: np.random.Generator) -> BatchDraw:
    """Draw ``Multinomial(n, pi)`` counts.

    numpy's generator produces the counts by sequential conditional binomial
    draws, so results are reproducible for a given seeded stream.
    """
    if n < 1:
        raise ValueError("batch size must be positive")
    pi = scheme.probabilities
    counts = rng.multinomial(n, pi).astype(np.int64)
    return BatchDraw(counts=counts, expected_counts=n * pi)


def exact_hh_covariance(responses, scheme: SamplingScheme, n: int) -> FloatArray:
    """Exact covariance of the weighted total under ``Multinomial(n, pi)``.

    ``(1/n) * (sum_i y_i y_i' / pi_i - t t')``.
    """
    y = np.asarray(responses, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    pi = scheme.probabilities
    t = y.sum(axis=0)
    second = (y / pi[:, None]).T @ y
    cov = (second - np.outer(t, t)) / n
    return 0.5 * (cov + cov.T)
