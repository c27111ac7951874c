"""Surrogate models for the learning step.

Each model is fitted coordinate-wise to the labeled (mapped) responses and
predicts all N elements. Residual variances are method-of-moments estimates
from K-fold out-of-fold residuals, pooled over elements (homoscedastic) and
kept diagonal across coordinates. Hyperparameters are chosen on the same
folds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy.linalg import eigh, lstsq
from scipy.spatial.distance import cdist

from .errors import FitFailed

FloatArray = npt.NDArray[np.float64]

CLASSIFICATION_CLAMP = 1e-6


class ModelKind(str, enum.Enum):
    LINEAR = "linear"
    KNN = "knn"
    KERNEL_RIDGE = "kernel_ridge"


@dataclass(frozen=True)
class SurrogateConfig:
    kind: ModelKind = ModelKind.KERNEL_RIDGE
    folds: int = 5
    min_fit_size: int = 10
    variance_floor_scale: float = 1e-6
    neighbors: tuple[int, ...] = (1, 2, 3, 5, 8, 12, 20)
    # Gaussian kernel bandwidths, in units of the [0, 1]-scaled auxiliaries
    bandwidths: tuple[float, ...] = (0.03, 0.07, 0.15, 0.3, 0.7, 2.0)
    ridges: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.min_fit_size < self.folds:
            raise ValueError("min_fit_size must be at least the number of folds")


@dataclass(frozen=True)
class LabeledSet:
    """Distinct labeled elements with their responses and auxiliaries."""

    indices: npt.NDArray[np.intp]
    responses: FloatArray
    auxiliaries: FloatArray

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if np.unique(idx).size != idx.size:
            raise ValueError("labeled indices must be distinct")
        y = np.asarray(self.responses, dtype=float)
        z = np.asarray(self.auxiliaries, dtype=float)
        y = y[:, None] if y.ndim == 1 else y
        z = z[:, None] if z.ndim == 1 else z
        if y.shape[0] != idx.size or z.shape[0] != idx.size:
            raise ValueError("one response and auxiliary row per labeled index")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "auxiliaries", z)

    @classmethod
    def from_population(cls, indices, responses, auxiliaries) -> "LabeledSet":
        idx = np.unique(np.asarray(indices, dtype=np.intp))
        return cls(idx, np.asarray(responses)[idx], np.asarray(auxiliaries)[idx])

    def __len__(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class SurrogateFit:
    predicted_means: FloatArray
    residual_covariances: FloatArray
    success: bool
    holdout_score: float
    residual_variances: FloatArray
    hyperparameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RatioSurrogateFit:
    """Two-part fit for a ratio of weighted totals.

    ``crash_prob`` is the predicted event probability, ``pred`` and
    ``resid_sd`` describe the outcome given an event.
    """

    crash_prob: FloatArray
    pred: FloatArray
    resid_sd: FloatArray
    crash_ok: bool
    outcome_ok: bool
    crash_score: float
    outcome_score: float

    @property
    def success(self) -> bool:
        return self.crash_ok or self.outcome_ok

    @property
    def holdout_score(self) -> float:
        scores = [s for s in (self.crash_score, self.outcome_score) if not math.isnan(s)]
        return max(scores) if scores else float("nan")


def fold_assignment(n: int, folds: int, seed: int) -> npt.NDArray[np.intp]:
    """Balanced random fold labels, deterministic in ``(n, folds, seed)``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % folds
    rng.shuffle(labels)
    return labels


def scale_auxiliaries(all_aux) -> tuple[FloatArray, FloatArray]:
    """Per-column affine map of the known auxiliaries onto [0, 1]."""
    z = np.asarray(all_aux, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    lo = z.min(axis=0)
    span = z.max(axis=0) - lo
    span[span == 0] = 1.0
    return lo, span


# -- coordinate-wise regressors --------------------------------------------
# each returns (out-of-fold predictions, predictions for all rows, params)


def _linear(z_lab, y, z_all, folds, config):
    design = np.column_stack([np.ones(len(y)), z_lab])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise FitFailed("linear design is rank deficient")
    oof = np.empty_like(y)
    for f in np.unique(folds):
        test = folds == f
        coef = lstsq(design[~test], y[~test])[0]
        oof[test] = design[test] @ coef
    coef = lstsq(design, y)[0]
    full = np.column_stack([np.ones(z_all.shape[0]), z_all]) @ coef
    return oof, full, {}


def _knn(z_lab, y, z_all, folds, config):
    n = len(y)
    d2 = cdist(z_lab, z_lab, "sqeuclidean")
    d2[folds[:, None] == folds[None, :]] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")
    # cumulative means over the nearest out-of-fold neighbours
    train_sizes = n - np.bincount(folds)[folds]
    csum = np.cumsum(y[order], axis=1)
    best = None
    for k in config.neighbors:
        kk = np.minimum(k, train_sizes)
        oof = csum[np.arange(n), kk - 1] / kk
        sse = float(np.sum((y - oof) ** 2))
        if best is None or sse < best[0] - 1e-12 * max(best[0], 1.0):
            best = (sse, k, oof)
    _, k, oof = best
    k = min(k, n)
    d_all = cdist(z_all, z_lab, "sqeuclidean")
    if k == n:
        full = np.full(z_all.shape[0], y.mean())
    else:
        nearest = np.argpartition(d_all, k - 1, axis=1)[:, :k]
        full = y[nearest].mean(axis=1)
    return oof, full, {"k": k}


def _gaussian_kernel(a, b, bandwidth):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bandwidth**2))


def _kernel_ridge(z_lab, y, z_all, folds, config):
    """Gaussian kernel ridge with an unpenalised intercept.

    K-fold residuals come from one eigendecomposition per bandwidth via the
    block deletion identity ``e_cv[B] = (I - H[B, B])^-1 e[B]``, exact for
    any penalised least-squares smoother ``H``.
    """
    n = len(y)
    centre = np.eye(n) - 1.0 / n
    fold_ids = [np.flatnonzero(folds == f) for f in np.unique(folds)]
    lams = np.asarray(config.ridges, dtype=float)
    best = None
    for bw in config.bandwidths:
        gram = _gaussian_kernel(z_lab, z_lab, bw)
        s, q = eigh(centre @ gram @ centre)
        s = np.clip(s, 0.0, None)
        qcy = q.T @ (y - y.mean())
        shrink = s / (s[None, :] + lams[:, None])  # one row per ridge value
        resid = y - ((shrink * qcy) @ q.T + y.mean())
        oof_resid = np.empty_like(resid)
        for b in fold_ids:
            qb = q[b]
            h_bb = (qb[None] * shrink[:, None, :]) @ qb.T + 1.0 / n
            lhs = np.eye(b.size) - h_bb
            oof_resid[:, b] = np.linalg.solve(lhs, resid[:, b, None])[..., 0]
        sse = np.einsum("ij,ij->i", oof_resid, oof_resid)
        for j, lam in enumerate(lams):
            if not np.isfinite(sse[j]):
                continue
            if best is None or sse[j] < best[0]:
                best = (float(sse[j]), bw, float(lam), y - oof_resid[j], gram, s, q, qcy)
    if best is None:
        raise FitFailed("kernel ridge cross-validation did not produce finite residuals")
    _, bw, lam, oof, gram, s, q, qcy = best
    alpha = q @ (qcy / (s + lam))
    intercept = float(np.mean(y - gram @ alpha))
    full = intercept + _gaussian_kernel(z_all, z_lab, bw) @ alpha
    return oof, full, {"bandwidth": bw, "ridge": lam}


_REGRESSORS = {
    ModelKind.LINEAR: _linear,
    ModelKind.KNN: _knn,
    ModelKind.KERNEL_RIDGE: _kernel_ridge,
}


def _cross_validate(kind, z_lab, y, z_all, folds, config):
    return _REGRESSORS[ModelKind(kind)](z_lab, y, z_all, folds, config)


def _prepare(labeled: LabeledSet, all_aux, config: SurrogateConfig):
    if len(labeled) < config.min_fit_size:
        raise FitFailed(
            f"{len(labeled)} labeled elements, at least {config.min_fit_size} needed"
        )
    z_all = np.asarray(all_aux, dtype=float)
    z_all = z_all[:, None] if z_all.ndim == 1 else z_all
    if z_all.shape[1] < 1:
        raise FitFailed("no auxiliary variables to learn from")
    lo, span = scale_auxiliaries(z_all)
    z_all = (z_all - lo) / span
    z_lab = (labeled.auxiliaries - lo) / span
    folds = fold_assignment(len(labeled), config.folds, config.seed)
    return z_lab, z_all, folds


def variance_floor(y_coord, scale: float) -> float:
    v = float(np.var(y_coord, ddof=1)) if y_coord.size > 1 else 0.0
    return scale * (v if v > 0 else 1.0)


def is_constant(values) -> bool:
    """Constant up to rounding (targets recovered by division carry a few ulps)."""
    v = np.asarray(values, dtype=float)
    return v.size == 0 or float(np.ptp(v)) <= 1e-12 * max(1.0, float(np.abs(v).max()))


def r_squared(y, oof) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return float("nan")
    return 1.0 - float(np.sum((y - oof) ** 2)) / ss_tot


def fit_surrogate(
    labeled: LabeledSet, all_aux, config: SurrogateConfig | None = None
) -> SurrogateFit:
    """Fit the configured model to every response coordinate.

    Constant coordinates (such as the leading 1 of the Hajek mapping) are
    predicted exactly and excluded from the hold-out score; the score is the
    smallest out-of-fold R^2 over the remaining coordinates. Raises
    :class:`FitFailed` when the model cannot be fitted at all.
    """
    config = config or SurrogateConfig()
    z_lab, z_all, folds = _prepare(labeled, all_aux, config)
    n_all = z_all.shape[0]
    d = labeled.responses.shape[1]
    means = np.empty((n_all, d))
    variances = np.empty(d)
    scores = []
    params = {}
    for j in range(d):
        y = labeled.responses[:, j]
        floor = variance_floor(y, config.variance_floor_scale)
        if is_constant(y):
            means[:, j] = y.mean()
            variances[j] = floor
            continue
        oof, full, hp = _cross_validate(config.kind, z_lab, y, z_all, folds, config)
        means[:, j] = full
        variances[j] = max(float(np.mean((y - oof) ** 2)), floor)
        scores.append(r_squared(y, oof))
        params[j] = hp
    score = min(scores) if scores else 0.0
    covs = np.broadcast_to(np.diag(variances), (n_all, d, d))
    return SurrogateFit(
        predicted_means=means,
        residual_covariances=covs,
        success=bool(score > 0),
        holdout_score=float(score),
        residual_variances=variances,
        hyperparameters=params,
    )


def cv_residual_covariance(
    kind: ModelKind | str,
    labeled: LabeledSet,
    folds: int,
    all_aux,
    config: SurrogateConfig | None = None,
) -> FloatArray:
    """Pooled out-of-fold residual covariance, diagonal, broadcast to all N."""
    base = config or SurrogateConfig()
    cfg = SurrogateConfig(
        kind=kind,
        folds=folds,
        min_fit_size=max(folds, min(base.min_fit_size, len(labeled))),
        variance_floor_scale=base.variance_floor_scale,
        neighbors=base.neighbors,
        bandwidths=base.bandwidths,
        ridges=base.ridges,
        seed=base.seed,
    )
    if len(labeled) < folds:
        raise FitFailed("fewer labeled elements than folds")
    return fit_surrogate(labeled, all_aux, cfg).residual_covariances


def _classification_accuracy(y, oof) -> float:
    return float(np.mean((oof >= 0.5) == (y >= 0.5)))


def fit_ratio_surrogate(
    labeled_indices,
    crash,
    outcome,
    all_aux,
    config: SurrogateConfig | None = None,
    *,
    binary_outcome: bool | None = None,
) -> RatioSurrogateFit:
    """Event model times conditional outcome model.

    ``crash`` holds the 0/1 indicator for each labeled element and
    ``outcome`` the outcome value (ignored where ``crash`` is 0). Both
    classification-style targets are fitted with the configured regressor
    and clamped to ``[1e-6, 1 - 1e-6]``. A part that cannot be fitted, is
    trivial (constant target) or scores <= 0 on hold-out data falls back to
    constant predictions.
    """
    config = config or SurrogateConfig()
    idx = np.asarray(labeled_indices, dtype=np.intp)
    r = np.asarray(crash, dtype=float)
    x = np.asarray(outcome, dtype=float)
    z_all = np.asarray(all_aux, dtype=float)
    z_all = z_all[:, None] if z_all.ndim == 1 else z_all
    n_all = z_all.shape[0]
    lo, span = scale_auxiliaries(z_all)
    scaled_all = (z_all - lo) / span
    scaled_lab = scaled_all[idx]
    eps = CLASSIFICATION_CLAMP

    crash_rate = float(r.mean()) if r.size else 0.5
    crash_prob = np.full(n_all, np.clip(crash_rate, eps, 1 - eps))
    crash_ok, crash_score = False, float("nan")
    if r.size >= config.min_fit_size and not is_constant(r):
        folds = fold_assignment(r.size, config.folds, config.seed)
        try:
            oof, full, _ = _cross_validate(config.kind, scaled_lab, r, scaled_all, folds, config)
        except FitFailed:
            pass
        else:
            crash_score = _classification_accuracy(r, oof)
            if crash_score > 0:
                crash_ok = True
                crash_prob = np.clip(full, eps, 1 - eps)

    event = r > 0.5
    xe = x[event]
    if binary_outcome is None:
        binary_outcome = bool(xe.size) and bool(np.all((xe == 0) | (xe == 1)))
    centre = float(xe.mean()) if xe.size else 0.0
    pred = np.full(n_all, centre)
    if binary_outcome:
        pc = np.clip(pred, eps, 1 - eps)
        resid_sd = np.sqrt(pc * (1 - pc))
    else:
        sd = float(np.std(xe, ddof=1)) if xe.size > 1 else 0.0
        resid_sd = np.full(n_all, sd)
    outcome_ok, outcome_score = False, float("nan")
    if xe.size >= config.min_fit_size and not is_constant(xe):
        folds = fold_assignment(xe.size, config.folds, config.seed + 1)
        try:
            oof, full, _ = _cross_validate(
                config.kind, scaled_lab[event], xe, scaled_all, folds, config
            )
        except FitFailed:
            pass
        else:
            if binary_outcome:
                outcome_score = _classification_accuracy(xe, oof)
            else:
                outcome_score = r_squared(xe, oof)
            if outcome_score > 0:
                outcome_ok = True
                if binary_outcome:
                    pred = np.clip(full, eps, 1 - eps)
                    resid_sd = np.sqrt(pred * (1 - pred))
                else:
                    pred = full
                    floor = variance_floor(xe, config.variance_floor_scale)
                    mse = max(float(np.mean((xe - oof) ** 2)), floor)
                    resid_sd = np.full(n_all, math.sqrt(mse))
    return RatioSurrogateFit(
        crash_prob=crash_prob,
        pred=pred,
        resid_sd=resid_sd,
        crash_ok=crash_ok,
        outcome_ok=outcome_ok,
        crash_score=crash_score,
        outcome_score=outcome_score,
    )


def ratio_moments(fit: RatioSurrogateFit, p) -> tuple[FloatArray, FloatArray]:
    """Mean and covariance of ``p * (R, R X)`` implied by a two-part fit.

    Total expectation/covariance conditioning on ``R``; lets the generic
    predictive scheme be compared against the two-part formula.
    """
    p = np.asarray(p, dtype=float)
    r, x, s2 = fit.crash_prob, fit.pred, fit.resid_sd**2
    means = np.column_stack([p * r, p * r * x])
    covs = np.empty((p.size, 2, 2))
    covs[:, 0, 0] = p**2 * r * (1 - r)
    covs[:, 0, 1] = covs[:, 1, 0] = p**2 * r * (1 - r) * x
    covs[:, 1, 1] = p**2 * (r * (s2 + x**2) - (r * x) ** 2)
    return means, covs
