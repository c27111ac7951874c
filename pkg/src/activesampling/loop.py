"""The active sampling loop: learn, optimise the scheme, sample, label, estimate."""

from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import numpy.typing as npt

from .characteristics import Characteristic, Kind, Population
from .errors import ConfigError, DegenerateScheme, DomainError, FitFailed, OracleFailure
from .estimation import (
    BatchRecord,
    PooledEstimate,
    SampleHistory,
    VarianceMethod,
    estimate,
    pool_totals,
)
from .schemes import (
    DEFAULT_EPSILON,
    SamplingScheme,
    application_scheme,
    draw_multinomial,
    optimal_scheme_predictive,
    scheme_from_weights,
    uniform_scheme,
)
from .surrogates import (
    LabeledSet,
    SurrogateConfig,
    fit_ratio_surrogate,
    fit_surrogate,
    ratio_moments,
)

log = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


class LabelOracle(Protocol):
    """Returns the mapped response vector of element ``index``.

    Must be deterministic: repeated queries give identical values.
    """

    def __call__(self, index: int) -> FloatArray: ...


class PopulationOracle:
    """Oracle backed by a fully enumerated population (the harness's truth)."""

    def __init__(self, pop: Population) -> None:
        self.responses = pop.responses
        self.calls = 0

    def __call__(self, index: int) -> FloatArray:
        self.calls += 1
        return self.responses[index]


_THINNING = ((100, 10), (500, 25), (1000, 50), (5000, 100), (10000, 250))


def thinned_refit(labeled_count: int, last_refit_count: int | None) -> bool:
    """Refit schedule that thins out as the sample grows.

    Every 10 new observations up to 100, every 25 up to 500, every 50 up to
    1000, then progressively sparser.
    """
    if last_refit_count is None:
        return True
    step = 500
    for limit, spacing in _THINNING:
        if last_refit_count < limit:
            step = spacing
            break
    return labeled_count - last_refit_count >= step


RefitRule = Callable[[int, "int | None"], bool]


def every_iteration(labeled_count: int, last_refit_count: int | None) -> bool:
    return True


@dataclass(frozen=True)
class LoopConfig:
    """Settings for :func:`run_active_sampling`.

    ``batch_sizes`` may be a single int (used for every iteration) or one
    entry per iteration. ``naive`` forces the residual covariances to zero.
    ``early_stopping=False`` ignores the precision target (benchmarks run to
    the full budget).
    """

    max_iterations: int
    precision_target: float
    batch_sizes: int | tuple[int, ...] = 10
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    refit: RefitRule = every_iteration
    variance_method: VarianceMethod = VarianceMethod.DESIGN
    naive: bool = False
    fallback: str | None = None
    epsilon: float = DEFAULT_EPSILON
    alpha: float = 0.05
    bootstrap_replicates: int = 1000
    seed: int = 0
    early_stopping: bool = True
    oracle_timeout: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variance_method", VarianceMethod(self.variance_method))
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not self.precision_target > 0:
            raise ConfigError("precision_target must be positive")
        sizes = self.batch_sizes
        if isinstance(sizes, int):
            sizes = (sizes,) * self.max_iterations
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < self.max_iterations:
            raise ConfigError("need one batch size per iteration")
        if any(s < 1 for s in sizes):
            raise ConfigError("batch sizes must be positive")
        if self.variance_method is VarianceMethod.DESIGN and any(s < 2 for s in sizes):
            raise ConfigError("design-based variance needs batch sizes of at least 2")
        if self.fallback not in (None, "uniform", "density"):
            raise ConfigError(f"unknown fallback {self.fallback!r}")
        object.__setattr__(self, "batch_sizes", sizes)

    def fallback_for(self, c: Characteristic) -> str:
        if self.fallback is not None:
            return self.fallback
        return "density" if c.kind is Kind.RATIO else "uniform"


@dataclass(frozen=True)
class IterationTrace:
    iteration: int
    batch_size: int
    cumulative_size: int
    used_fallback: bool
    fit_attempted: bool
    fit_success: bool | None
    holdout_score: float | None
    min_probability: float
    max_probability: float
    effective_size: float
    new_labels: int
    theta_hat: float | None
    std_error: float | None
    note: str = ""


@dataclass
class LoopResult:
    estimate: PooledEstimate | None
    labeled: npt.NDArray[np.intp]
    history: SampleHistory
    trace: list[IterationTrace]
    termination: str
    schemes: list[FloatArray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _scheme_stats(pi: FloatArray) -> tuple[float, float, float]:
    return float(pi.min()), float(pi.max()), float(1.0 / np.sum(pi**2))


class _Labels:
    """Cache of retrieved responses; only new elements reach the oracle."""

    def __init__(self, oracle: LabelOracle, d: int, timeout: float | None) -> None:
        self.oracle = oracle
        self.d = d
        self.timeout = timeout
        self.values: dict[int, FloatArray] = {}
        self._pool = None

    def _query(self, i: int) -> FloatArray:
        if self.timeout is None:
            return self.oracle(i)
        if self._pool is None:
            self._pool = concurrent.futures.ThreadPoolExecutor(max_workers=1)
        return self._pool.submit(self.oracle, i).result(timeout=self.timeout)

    def fetch(self, indices) -> int:
        new = [int(i) for i in indices if int(i) not in self.values]
        for i in sorted(new):
            try:
                y = np.asarray(self._query(i), dtype=float).reshape(-1)
            except Exception as exc:  # noqa: BLE001 - any oracle error aborts the loop
                raise OracleFailure(f"oracle failed on element {i}: {exc!r}") from exc
            if y.shape != (self.d,) or not np.all(np.isfinite(y)):
                raise OracleFailure(f"oracle returned an invalid response for element {i}")
            self.values[i] = y
        return len(new)

    def rows(self, indices) -> FloatArray:
        return np.array([self.values[int(i)] for i in indices]).reshape(-1, self.d)

    def labeled_set(self, aux: FloatArray) -> LabeledSet:
        idx = np.array(sorted(self.values), dtype=np.intp)
        return LabeledSet(idx, self.rows(idx), aux[idx])

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False)


def _ratio_parts(labeled: LabeledSet, p: FloatArray):
    """Recover the event indicator and outcome from ``p * (r, r x)``."""
    w = p[labeled.indices]
    r = labeled.responses[:, 0] / w
    with np.errstate(invalid="ignore", divide="ignore"):
        x = np.where(r > 0.5, labeled.responses[:, 1] / labeled.responses[:, 0], np.nan)
    return np.rint(r), x


def run_active_sampling(
    auxiliaries,
    c: Characteristic,
    oracle: LabelOracle,
    cfg: LoopConfig,
    *,
    prior_weights=None,
    keep_schemes: bool = False,
) -> LoopResult:
    """Run the adaptive design until the precision target or iteration limit.

    Iteration 1 always uses the fallback scheme. From iteration 2 on, a
    surrogate is (re)fitted on the labeled set; when the fit succeeds the
    scheme is optimised at the previous pooled totals, otherwise the
    fallback is used. Re-selected elements are not re-labeled but still
    count in estimation.
    """
    aux = np.asarray(auxiliaries, dtype=float)
    aux = aux[:, None] if aux.ndim == 1 else aux
    n_pop = aux.shape[0]
    p = np.ones(n_pop) if prior_weights is None else np.asarray(prior_weights, dtype=float)
    d = c.dimension

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    draw_rng = np.random.default_rng(seeds[0])
    boot_rng = np.random.default_rng(seeds[1])

    if cfg.fallback_for(c) == "density":
        fallback = scheme_from_weights(p)
    else:
        fallback = uniform_scheme(n_pop)

    labels = _Labels(oracle, d, cfg.oracle_timeout)
    history = SampleHistory()
    trace: list[IterationTrace] = []
    schemes: list[FloatArray] = []
    current: PooledEstimate | None = None
    fit = None
    last_refit: int | None = None
    termination = "IterationLimit"
    prev_totals: FloatArray | None = None

    def partial() -> LoopResult:
        return LoopResult(current, np.array(sorted(labels.values), dtype=np.intp),
                          history, trace, "OracleFailure", schemes)

    try:
        for k in range(1, cfg.max_iterations + 1):
            note = ""
            fit_attempted = False
            n_labeled = len(labels.values)
            if k > 1 and n_labeled >= cfg.surrogate.min_fit_size and cfg.refit(n_labeled, last_refit):
                fit_attempted = True
                last_refit = n_labeled
                labeled = labels.labeled_set(aux)
                try:
                    if c.kind is Kind.RATIO:
                        r, x = _ratio_parts(labeled, p)
                        fit = fit_ratio_surrogate(labeled.indices, r, x, aux, cfg.surrogate)
                    else:
                        fit = fit_surrogate(labeled, aux, cfg.surrogate)
                except FitFailed as exc:
                    fit = None
                    note = f"fit failed: {exc}"

            scheme = None
            if k > 1 and fit is not None and fit.success:
                try:
                    scheme = _optimised_scheme(c, fit, prev_totals, p, cfg)
                except DomainError:
                    note = "gradient undefined at previous estimate"
                except DegenerateScheme:
                    note = "all importance scores zero"
            used_fallback = scheme is None
            if used_fallback:
                scheme = fallback

            n_k = cfg.batch_sizes[k - 1]
            draw = draw_multinomial(scheme, n_k, draw_rng)
            new = labels.fetch(draw.selected)
            ys = np.zeros((n_pop, d))
            ys[draw.selected] = labels.rows(draw.selected)
            history.append(BatchRecord.from_draw(draw, ys))
            if keep_schemes:
                schemes.append(scheme.probabilities)

            try:
                current = estimate(
                    history, c, cfg.variance_method, alpha=cfg.alpha,
                    B=cfg.bootstrap_replicates, rng=boot_rng,
                )
            except DomainError:
                current = None
                note = (note + "; " if note else "") + "estimate undefined"
            prev_totals = pool_totals(history)

            lo, hi, ess = _scheme_stats(scheme.probabilities)
            trace.append(IterationTrace(
                iteration=k,
                batch_size=n_k,
                cumulative_size=history.total_size,
                used_fallback=used_fallback,
                fit_attempted=fit_attempted,
                fit_success=None if fit is None else bool(fit.success),
                holdout_score=None if fit is None else float(fit.holdout_score),
                min_probability=lo,
                max_probability=hi,
                effective_size=ess,
                new_labels=new,
                theta_hat=None if current is None else current.theta_hat,
                std_error=None if current is None else current.std_error,
                note=note,
            ))
            if (
                cfg.early_stopping
                and current is not None
                and current.available
                and current.std_error < cfg.precision_target
            ):
                termination = "PrecisionReached"
                break
    except OracleFailure as exc:
        exc.partial = partial()
        raise
    finally:
        labels.close()

    return LoopResult(
        estimate=current,
        labeled=np.array(sorted(labels.values), dtype=np.intp),
        history=history,
        trace=trace,
        termination=termination,
        schemes=schemes,
    )


def _optimised_scheme(c, fit, prev_totals, p, cfg: LoopConfig) -> SamplingScheme:
    if c.kind is Kind.RATIO:
        if cfg.naive:
            means, _ = ratio_moments(fit, p)
            grad = c.gradient(prev_totals)
            return optimal_scheme_predictive(
                means, np.zeros((p.size, 2, 2)), grad, cfg.epsilon
            )
        theta_prev = c.value(prev_totals)
        return application_scheme(
            p, fit.crash_prob, fit.pred, fit.resid_sd, theta_prev, cfg.epsilon
        )
    grad = c.gradient(prev_totals)
    covs = fit.residual_covariances
    if cfg.naive:
        covs = np.zeros_like(covs)
    return optimal_scheme_predictive(fit.predicted_means, covs, grad, cfg.epsilon)


def pilot_sample_size(pilot_variance: float, delta: float) -> int:
    """Simple-random-sampling size giving standard error ``delta``.

    ``ceil(s^2 / delta^2)``; a conservative budget for the adaptive design.
    """
    if not (pilot_variance > 0 and delta > 0):
        raise ValueError("pilot variance and delta must be positive")
    ratio = pilot_variance / delta**2
    # absorb representation error such as 1 / 0.1**2 = 100.00000000000001
    return max(1, math.ceil(ratio * (1 - 1e-12)))


def pilot_variance(values) -> float:
    """Sample variance of a pilot sample's study variable."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size < 2:
        raise ValueError("pilot sample needs at least two observations")
    return float(np.var(v, ddof=1))
