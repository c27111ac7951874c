"""Repeated-subsampling experiments: eRMSE and interval coverage tables."""

from __future__ import annotations

import csv
import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from ..characteristics import (
    Characteristic,
    Kind,
    Population,
    hajek_mean,
    linear_mean,
    true_value,
)
from ..errors import ConfigError, DomainError, PreconditionError
from ..estimation import (
    BatchRecord,
    SampleHistory,
    VarianceMethod,
    estimate,
    pool_totals,
)
from ..loop import LoopConfig, PopulationOracle, every_iteration, run_active_sampling, thinned_refit
from ..schemes import BaselineKind, baseline_scheme, draw_multinomial
from ..surrogates import ModelKind, SurrogateConfig
from .synthetic import LEVERAGE_COLUMNS, SEVERITY_FACTORS

CSV_HEADER = (
    "method", "scenario", "sigma", "r2", "estimator", "batch_size", "n",
    "m_reps", "ermse", "ermse_se", "coverage", "seed",
)


class Method(str, enum.Enum):
    SRS = "SRS"
    SRS_LINEAR = "SRS-linear"
    SRS_HAJEK = "SRS-Hajek"
    RATIO = "Ratio"
    CONTROL_VARIATE = "ControlVariate"
    IMPORTANCE_AUX = "ImportanceAux"
    LEVERAGE = "Leverage"
    DENSITY = "Density"
    SEVERITY = "Severity"
    NAIVE_AS = "NaiveAS"
    AS = "AS"


ADAPTIVE = (Method.AS, Method.NAIVE_AS)
_SCHEME_OF = {
    Method.SRS: BaselineKind.UNIFORM,
    Method.SRS_LINEAR: BaselineKind.UNIFORM,
    Method.SRS_HAJEK: BaselineKind.UNIFORM,
    Method.RATIO: BaselineKind.UNIFORM,
    Method.CONTROL_VARIATE: BaselineKind.UNIFORM,
    Method.IMPORTANCE_AUX: BaselineKind.PROPORTIONAL_TO_AUX,
    Method.LEVERAGE: BaselineKind.LEVERAGE,
    Method.DENSITY: BaselineKind.DENSITY,
    Method.SEVERITY: BaselineKind.SEVERITY,
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One benchmark cell: a method run ``replications`` times up to ``n_max``.

    ``characteristic`` names the target (``linear``, ``hajek``, ``ratio``,
    ``total``); SRS-linear and SRS-Hajek fix it themselves.
    ``checkpoints`` are cumulative sample sizes (multiples of the batch
    size); by default every multiple of 50 plus the first batch.
    """

    method: Method = Method.AS
    characteristic: str = "linear"
    batch_size: int = 10
    n_max: int = 250
    replications: int = 200
    variance_method: VarianceMethod = VarianceMethod.DESIGN
    seed: int = 0
    surrogate: ModelKind = ModelKind.KERNEL_RIDGE
    refit: str = "every"
    checkpoints: tuple[int, ...] | None = None
    bootstrap_replicates: int = 500
    alpha: float = 0.05
    epsilon: float = 1e-3
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "variance_method", VarianceMethod(self.variance_method))
        object.__setattr__(self, "surrogate", ModelKind(self.surrogate))
        if self.replications < 2:
            raise ConfigError("need at least two replications")
        if self.batch_size < 1 or self.n_max < self.batch_size:
            raise ConfigError("n_max must be at least the batch size")
        if self.refit not in ("every", "thinned"):
            raise ConfigError("refit must be 'every' or 'thinned'")
        if self.characteristic not in ("linear", "hajek", "ratio", "total"):
            raise ConfigError(f"unknown characteristic {self.characteristic!r}")
        if self.checkpoints is not None:
            cps = tuple(sorted(int(c) for c in self.checkpoints))
            if any(c % self.batch_size or c < self.batch_size or c > self.n_max for c in cps):
                raise ConfigError("checkpoints must be multiples of the batch size within n_max")
            object.__setattr__(self, "checkpoints", cps)

    @property
    def iterations(self) -> int:
        return self.n_max // self.batch_size

    def resolved_checkpoints(self) -> tuple[int, ...]:
        if self.checkpoints is not None:
            return self.checkpoints
        step = 50 if self.n_max >= 100 else self.batch_size
        cps = {self.batch_size, self.iterations * self.batch_size}
        cps.update(range(step, self.n_max + 1, step))
        return tuple(sorted(c for c in cps if c % self.batch_size == 0))


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)
        self.errors.extend(other.errors)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow([_fmt(row.get(k)) for k in CSV_HEADER])

    def write_meta(self, path) -> None:
        Path(path).write_text(json.dumps({"meta": self.meta, "errors": self.errors}, indent=2, default=str))

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def population_labels(pop: Population) -> dict:
    spec = pop.info.get("spec")
    sigma = getattr(spec, "sigma", None)
    r2 = getattr(spec, "r2", None)
    scenario = getattr(spec, "scenario", None)
    if scenario is not None:
        scenario = getattr(scenario, "value", scenario)
    elif pop.characteristic is not None and pop.characteristic.kind is Kind.RATIO:
        scenario = "application"
    return {"scenario": scenario or "custom", "sigma": sigma, "r2": r2}


def characteristic_for(name: str, pop: Population) -> Characteristic:
    if name == "linear":
        return linear_mean(pop.size)
    if name == "hajek":
        return hajek_mean()
    if name == "total":
        return Characteristic(Kind.LINEAR_TOTAL)
    return Characteristic(Kind.RATIO)


def target_for(exp: ExperimentSpec, pop: Population) -> Characteristic:
    if exp.method is Method.SRS_LINEAR:
        return linear_mean(pop.size)
    if exp.method is Method.SRS_HAJEK:
        return hajek_mean()
    return characteristic_for(exp.characteristic, pop)


def _estimator_label(exp: ExperimentSpec, c: Characteristic) -> str:
    if exp.method is Method.RATIO:
        return "ratio_estimator"
    if exp.method is Method.CONTROL_VARIATE:
        return "control_variate"
    return c.kind.value


def estimator_baselines(y_sample, z_sample, z_pop_mean: float, kind: str) -> float:
    """Ratio and control-variate estimators of a mean from an SRS sample.

    The sample is given with multiplicity (one entry per draw).
    """
    y = np.asarray(y_sample, dtype=float)
    z = np.asarray(z_sample, dtype=float)
    y_bar, z_bar = y.mean(), z.mean()
    if kind == "Ratio":
        if z_bar == 0:
            raise DomainError("sample mean of the auxiliary is zero")
        return float(z_pop_mean * y_bar / z_bar)
    if kind == "ControlVariate":
        zc = z - z_bar
        szz = float(zc @ zc)
        beta = float(zc @ (y - y_bar)) / szz if szz > 0 else 0.0
        return float(y_bar + beta * (z_pop_mean - z_bar))
    raise ValueError(f"unknown baseline estimator {kind!r}")


def check_preconditions(pop: Population, exp: ExperimentSpec) -> None:
    m = exp.method
    kind = exp.characteristic
    needs_y = m in (Method.SRS_LINEAR, Method.SRS_HAJEK, Method.RATIO, Method.CONTROL_VARIATE)
    if needs_y and "y" not in pop.outcomes:
        raise PreconditionError(f"{m.value} needs a scalar study variable")
    if m in (Method.RATIO, Method.CONTROL_VARIATE):
        if pop.auxiliaries.shape[1] != 1:
            raise PreconditionError(f"{m.value} needs exactly one auxiliary variable")
        if m is Method.RATIO and not np.all(pop.auxiliaries[:, 0] > 0):
            raise PreconditionError("ratio estimator needs a strictly positive auxiliary")
    if m is Method.IMPORTANCE_AUX and not np.all(pop.auxiliaries[:, 0] > 0):
        raise PreconditionError("importance sampling on the auxiliary needs it strictly positive")
    if m is Method.LEVERAGE and pop.prior_weights is None:
        raise PreconditionError("leverage sampling needs prior weights")
    if m is Method.SEVERITY:
        missing = [n for n, _ in SEVERITY_FACTORS if n not in pop.aux_names]
        if missing:
            raise PreconditionError(f"severity sampling needs auxiliaries {missing}")
    if kind == "ratio" and "r" not in pop.outcomes:
        raise PreconditionError("ratio characteristic needs event/outcome data")
    if kind in ("linear", "hajek", "total") and "y" not in pop.outcomes:
        raise PreconditionError(f"{kind} characteristic needs a scalar study variable")
    if exp.variance_method is VarianceMethod.DESIGN and exp.batch_size < 2:
        raise PreconditionError("design-based variance needs batch sizes of at least 2")


def _fixed_scheme(pop: Population, method: Method):
    kind = _SCHEME_OF[method]
    return baseline_scheme(
        kind, pop,
        severity_factors=SEVERITY_FACTORS,
        leverage_columns=LEVERAGE_COLUMNS if set(LEVERAGE_COLUMNS) <= set(pop.aux_names) else None,
    )


def replication_streams(master_seed: int, rep: int):
    """Per-replication (draw, bootstrap) generators.

    The draw stream matches the one the active loop builds from the same
    replication seed, so fallback iterations share draws with SRS.
    """
    seed = replication_seed(master_seed, rep)
    draw_seq, boot_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(draw_seq), np.random.default_rng(boot_seq)


def replication_seed(master_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([master_seed, rep]).generate_state(1)[0])


def _loop_config(exp: ExperimentSpec, rep_seed: int) -> LoopConfig:
    return LoopConfig(
        max_iterations=exp.iterations,
        precision_target=1.0,
        batch_sizes=exp.batch_size,
        surrogate=SurrogateConfig(kind=exp.surrogate, seed=rep_seed),
        refit=thinned_refit if exp.refit == "thinned" else every_iteration,
        variance_method=VarianceMethod.MARTINGALE if exp.batch_size < 2 else VarianceMethod.DESIGN,
        naive=exp.method is Method.NAIVE_AS,
        epsilon=exp.epsilon,
        seed=rep_seed,
        early_stopping=False,
    )


def _history_for(pop: Population, c: Characteristic, exp: ExperimentSpec, rep: int, draw_rng):
    """The selection history of one replication (adaptive or fixed scheme)."""
    if exp.method in ADAPTIVE:
        rep_seed = replication_seed(exp.seed, rep)
        result = run_active_sampling(
            pop.auxiliaries, c, PopulationOracle(pop), _loop_config(exp, rep_seed),
            prior_weights=pop.prior_weights,
        )
        return result.history
    scheme = _fixed_scheme(pop, exp.method)
    history = SampleHistory()
    for _ in range(exp.iterations):
        draw = draw_multinomial(scheme, exp.batch_size, draw_rng)
        history.append(BatchRecord.from_draw(draw, pop.responses))
    return history


def _draws_of(history: SampleHistory) -> np.ndarray:
    return np.concatenate([np.repeat(r.indices, r.counts) for r in history.records])


def replicate(pop: Population, exp: ExperimentSpec, rep: int, variance_methods=()):
    """Estimates (and CI coverage flags) at each checkpoint for one replication.

    Returns ``(estimates, covers)`` where ``covers`` maps each requested
    variance method to a boolean array (NaN where undefined).
    """
    c = target_for(exp, pop)
    if pop.characteristic != c:
        pop = pop.with_characteristic(c)
    theta = true_value(pop, c)
    draw_rng, boot_rng = replication_streams(exp.seed, rep)
    history = _history_for(pop, c, exp, rep, draw_rng)
    cps = exp.resolved_checkpoints()
    est = np.full(len(cps), np.nan)
    covers = {VarianceMethod(v): np.full(len(cps), np.nan) for v in variance_methods}
    z_pop = float(pop.auxiliaries[:, 0].mean())
    y_raw = pop.outcomes.get("y")
    for j, n in enumerate(cps):
        prefix = history.prefix(n // exp.batch_size)
        if exp.method in (Method.RATIO, Method.CONTROL_VARIATE):
            idx = _draws_of(prefix)
            est[j] = estimator_baselines(y_raw[idx], pop.auxiliaries[idx, 0], z_pop, exp.method.value)
            continue
        try:
            est[j] = c.value(pool_totals(prefix))
        except DomainError:
            continue
        for v in covers:
            if v is VarianceMethod.MARTINGALE and len(prefix) < 2:
                continue
            if v is VarianceMethod.DESIGN and exp.batch_size < 2:
                continue
            e = estimate(prefix, c, v, alpha=exp.alpha, B=exp.bootstrap_replicates, rng=boot_rng)
            covers[v][j] = float(e.covers(theta))
    return est, covers


def _run_reps(pop, exp, variance_methods):
    reps = range(exp.replications)
    if exp.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=exp.n_jobs) as pool:
            out = list(pool.map(replicate, [pop] * exp.replications, [exp] * exp.replications,
                                reps, [variance_methods] * exp.replications))
    else:
        out = [replicate(pop, exp, r, variance_methods) for r in reps]
    estimates = np.array([o[0] for o in out])
    covers = {v: np.array([o[1][v] for o in out]) for v in out[0][1]} if out else {}
    return estimates, covers


def ermse(errors) -> tuple[float, float]:
    """Root mean squared error and its delta-method standard error."""
    sq = np.asarray(errors, dtype=float) ** 2
    mse = float(sq.mean())
    rmse = math.sqrt(mse)
    se_mse = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0
    se = se_mse / (2.0 * rmse) if rmse > 0 else 0.0
    return rmse, se


def ermse_band(row: dict, level: float = 0.95) -> tuple[float, float]:
    zq = stats.norm.isf((1 - level) / 2)
    return row["ermse"] - zq * row["ermse_se"], row["ermse"] + zq * row["ermse_se"]


@dataclass
class CellResult:
    """Per-replication estimates for one experiment cell, kept for tests."""

    exp: ExperimentSpec
    theta: float
    checkpoints: tuple[int, ...]
    estimates: np.ndarray
    covers: dict


def run_cell(pop: Population, exp: ExperimentSpec, variance_methods=()) -> CellResult:
    check_preconditions(pop, exp)
    c = target_for(exp, pop)
    theta = true_value(pop.with_characteristic(c) if pop.characteristic != c else pop, c)
    estimates, covers = _run_reps(pop, exp, tuple(variance_methods))
    return CellResult(exp, theta, exp.resolved_checkpoints(), estimates, covers)


def _base_row(pop, exp, c) -> dict:
    labels = population_labels(pop)
    return {
        "method": exp.method.value,
        **labels,
        "estimator": _estimator_label(exp, c),
        "batch_size": exp.batch_size,
        "m_reps": exp.replications,
        "seed": exp.seed,
    }


def _error_table(pop, exp, exc) -> ResultTable:
    c = characteristic_for(exp.characteristic, pop)
    row = {**_base_row(pop, exp, c), "n": None, "ermse": None, "ermse_se": None, "coverage": None}
    return ResultTable(rows=[row], errors=[{"method": exp.method.value, "error": str(exc)}])


def run_benchmark(pop: Population, exp: ExperimentSpec, *, keep_cells: list | None = None) -> ResultTable:
    """eRMSE per checkpoint (plus design-based coverage where defined)."""
    try:
        check_preconditions(pop, exp)
        if exp.method not in ADAPTIVE:
            _fixed_scheme(pop, exp.method)
    except (PreconditionError, ValueError) as exc:
        return _error_table(pop, exp, exc)
    with_cov = () if exp.method in (Method.RATIO, Method.CONTROL_VARIATE) else (exp.variance_method,)
    cell = run_cell(pop, exp, with_cov)
    if keep_cells is not None:
        keep_cells.append(cell)
    c = target_for(exp, pop)
    table = ResultTable()
    for j, n in enumerate(cell.checkpoints):
        errs = cell.estimates[:, j] - cell.theta
        ok = np.isfinite(errs)
        rmse, se = ermse(errs[ok]) if ok.any() else (float("nan"), float("nan"))
        cov = None
        if with_cov:
            flags = cell.covers[exp.variance_method][:, j]
            flags = flags[np.isfinite(flags)]
            cov = float(flags.mean()) if flags.size else None
        table.rows.append({**_base_row(pop, exp, c), "n": n, "ermse": rmse, "ermse_se": se,
                           "coverage": cov})
    table.meta["squared_errors"] = {exp.method.value: (cell.estimates - cell.theta).tolist()}
    return table


def run_coverage(pop: Population, exp: ExperimentSpec, variance_methods=None) -> ResultTable:
    """Empirical coverage of normal intervals per checkpoint and variance method.

    The ``estimator`` column reads ``<characteristic>|<variance method>``.
    """
    allowed = ADAPTIVE + (Method.SRS, Method.SRS_LINEAR, Method.SRS_HAJEK)
    if exp.method not in allowed:
        return _error_table(pop, exp, PreconditionError(
            f"coverage is defined for {[m.value for m in allowed]}"))
    methods = tuple(VarianceMethod(v) for v in (variance_methods or list(VarianceMethod)))
    try:
        cell = run_cell(pop, exp, methods)
    except PreconditionError as exc:
        return _error_table(pop, exp, exc)
    c = target_for(exp, pop)
    table = ResultTable()
    for v in methods:
        for j, n in enumerate(cell.checkpoints):
            errs = cell.estimates[:, j] - cell.theta
            ok = np.isfinite(errs)
            rmse, se = ermse(errs[ok]) if ok.any() else (float("nan"), float("nan"))
            flags = cell.covers[v][:, j]
            flags = flags[np.isfinite(flags)]
            row = _base_row(pop, exp, c)
            row["estimator"] = f"{c.kind.value}|{v.value}"
            row.update(n=n, ermse=rmse, ermse_se=se,
                       coverage=float(flags.mean()) if flags.size else None)
            table.rows.append(row)
    return table


def persistent_significance(errors_a, errors_b, checkpoints, level: float = 0.05):
    """Smallest checkpoint from which squared errors differ at every larger one.

    Welch two-sample t-tests on per-replication squared errors, one per
    checkpoint. Returns ``None`` when the difference is not significant at
    the largest checkpoint.
    """
    a = np.asarray(errors_a, dtype=float) ** 2
    b = np.asarray(errors_b, dtype=float) ** 2
    significant = []
    for j in range(len(checkpoints)):
        if np.allclose(a[:, j], b[:, j]):
            significant.append(False)
            continue
        p = stats.ttest_ind(a[:, j], b[:, j], equal_var=False).pvalue
        significant.append(bool(p < level))
    first = None
    for j in range(len(checkpoints) - 1, -1, -1):
        if not significant[j]:
            break
        first = checkpoints[j]
    return first


def run_experiments(pop: Population, base: ExperimentSpec, methods, *, reference: str | None = None) -> ResultTable:
    """Run several methods on one population and attach significance markers."""
    table = ResultTable()
    errors = {}
    for m in methods:
        exp = replace(base, method=Method(m))
        sub = run_benchmark(pop, exp)
        table.rows.extend(sub.rows)
        table.errors.extend(sub.errors)
        if "squared_errors" in sub.meta:
            errors.update(sub.meta["squared_errors"])
    cps = base.resolved_checkpoints()
    reference = reference or next((m for m in ("SRS-linear", "SRS", "SRS-Hajek") if m in errors), None)
    markers = {}
    if reference is not None:
        for m, errs in errors.items():
            if m == reference:
                continue
            markers[m] = persistent_significance(errs, errors[reference], cps)
    table.meta = {
        "reference": reference,
        "persistent_significance": markers,
        "persistence_rule": "Welch t-test on squared errors, p < 0.05 at this and every larger checkpoint",
        "spec": {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(base).items()},
    }
    return table
