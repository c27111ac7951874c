"""Synthetic populations for benchmarking.

``generate_synthetic`` draws a scalar response from a Gaussian process over
a uniform grid of one auxiliary variable. ``generate_application_grid``
builds a stand-in for a scenario-generation grid: two simulation inputs per
case, prior scenario weights, an event indicator from a threshold surface
and an outcome defined only for events.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from ..characteristics import (
    Characteristic,
    Population,
    hajek_mean,
    linear_mean,
    make_population,
    ratio_of_weighted_totals,
)


class Scenario(str, enum.Enum):
    STRICTLY_POSITIVE = "positive"
    ZERO_MEAN = "zero_mean"


@dataclass(frozen=True)
class SyntheticSpec:
    sigma: float = 0.1
    r2: float = 0.5
    scenario: Scenario = Scenario.STRICTLY_POSITIVE
    n: int = 1000
    grid_lo: float = 0.001
    grid_hi: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if not self.grid_lo > 0 or not self.grid_hi > self.grid_lo:
            raise ValueError("grid must satisfy 0 < grid_lo < grid_hi")
        if not 0 < self.r2 < 1:
            raise ValueError("target R^2 must lie in (0, 1)")
        if not self.sigma > 0:
            raise ValueError("kernel bandwidth must be positive")
        if self.n < 2:
            raise ValueError("need at least two elements")


def gaussian_kernel_matrix(z, bandwidth: float):
    z = np.asarray(z, dtype=float).reshape(-1)
    return np.exp(-((z[:, None] - z[None, :]) ** 2) / (2.0 * bandwidth**2))


def sample_gaussian_process(z, bandwidth: float, rng: np.random.Generator, jitter: float = 1e-10):
    """Zero-mean GP draw through a jittered Cholesky factor.

    The jitter is raised tenfold until the factorisation succeeds; very
    smooth kernels on fine grids are numerically rank deficient.
    """
    k = gaussian_kernel_matrix(z, bandwidth)
    eye = np.eye(k.shape[0])
    while True:
        try:
            chol = cholesky(k + jitter * eye, lower=True)
            break
        except LinAlgError:
            jitter *= 10.0
            if jitter > 1e-2:
                raise
    return chol @ rng.standard_normal(k.shape[0])


def synthetic_study_variable(spec: SyntheticSpec):
    """Return ``(z, y, signal, realized_r2)`` before characteristic mapping."""
    rng = np.random.default_rng(spec.seed)
    z = np.linspace(spec.grid_lo, spec.grid_hi, spec.n)
    signal = sample_gaussian_process(z, spec.sigma, rng)
    noise_var = np.var(signal, ddof=1) * (1.0 - spec.r2) / spec.r2
    noise = np.sqrt(noise_var) * rng.standard_normal(spec.n)
    raw = signal + noise
    realized = float(np.var(signal, ddof=1) / np.var(raw, ddof=1))

    centre, scale = raw.mean(), raw.std(ddof=1)
    y = (raw - centre) / scale
    sig = (signal - centre) / scale
    if np.corrcoef(y, z)[0, 1] < 0:
        y, sig = -y, -sig
    # subtract first so the minimum lands on 0.1 exactly
    base = y.min() if spec.scenario is Scenario.STRICTLY_POSITIVE else y.mean()
    offset = 0.1 if spec.scenario is Scenario.STRICTLY_POSITIVE else 0.0
    return z, (y - base) + offset, (sig - base) + offset, realized


def generate_synthetic(spec: SyntheticSpec, c: Characteristic | None = None) -> Population:
    """Synthetic population; ``c`` defaults to the linear mean."""
    z, y, signal, realized = synthetic_study_variable(spec)
    c = c or linear_mean(spec.n)
    return make_population(
        c,
        z[:, None],
        y=y,
        aux_names=("z",),
        info={"signal": signal, "realized_r2": realized, "spec": spec},
    )


@dataclass(frozen=True)
class ApplicationGridSpec:
    """Scenario grid: ``cases`` x ``glance_levels`` x ``decel_levels`` elements."""

    cases: int = 4
    glance_levels: int = 25
    decel_levels: int = 20
    glance_max: float = 6.6
    decel_min: float = 3.3
    decel_max: float = 10.3
    outcome: str = "speed_reduction"
    seed: int = 0
    # forces every scenario to be an event; used for degenerate checks
    all_events: bool = False
    no_events: bool = False

    def __post_init__(self) -> None:
        if self.outcome not in ("speed_reduction", "crash_avoidance"):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if min(self.cases, self.glance_levels, self.decel_levels) < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def size(self) -> int:
        return self.cases * self.glance_levels * self.decel_levels


def application_grid_arrays(spec: ApplicationGridSpec):
    """Raw grid arrays: dict with glance, decel, max_speed, p, r, x."""
    rng = np.random.default_rng(spec.seed)
    glance_vals = np.linspace(0.0, spec.glance_max, spec.glance_levels)
    decel_vals = np.linspace(spec.decel_min, spec.decel_max, spec.decel_levels)

    # per-case constants: maximal impact speed, glance threshold, AEB authority
    max_speed = rng.uniform(40.0, 90.0, spec.cases)
    threshold = rng.uniform(0.5, 2.0, spec.cases)
    aeb_gain = rng.uniform(10.0, 25.0, spec.cases)

    case, gi, di = np.meshgrid(
        np.arange(spec.cases), np.arange(spec.glance_levels),
        np.arange(spec.decel_levels), indexing="ij",
    )
    case, gi, di = case.ravel(), gi.ravel(), di.ravel()
    glance = glance_vals[gi]
    decel = decel_vals[di]
    m = max_speed[case]

    g_pmf = np.exp(-((np.log(glance_vals + 0.25) - 0.3) ** 2) / (2 * 0.6**2)) / (glance_vals + 0.25)
    d_pmf = np.exp(-((decel_vals - 7.0) ** 2) / (2 * 1.5**2))
    p = g_pmf[gi] / g_pmf.sum() * d_pmf[di] / d_pmf.sum() / spec.cases

    # baseline impact speed rises with glance and falls with braking
    excess = glance - threshold[case] - 0.25 * (decel - spec.decel_min)
    span = spec.glance_max - threshold[case]
    v0 = m * np.clip(excess / span, 0.0, 1.0) ** 0.6
    if spec.all_events:
        v0 = np.maximum(v0, 1.0)
    if spec.no_events:
        v0 = np.zeros_like(v0)
    r = (v0 > 0).astype(float)

    wobble = 3.0 * np.sin(2.1 * glance + case) * np.cos(0.7 * decel)
    reduction = aeb_gain[case] + 2.0 * (decel - spec.decel_min) + wobble
    v1 = np.maximum(0.0, v0 - np.maximum(reduction, 0.0))
    if spec.outcome == "speed_reduction":
        x = v0 - v1
    else:
        x = (v1 == 0).astype(float)
    x = np.where(r > 0, x, np.nan)
    return {
        "glance": glance, "decel": decel, "max_speed": m, "case": case,
        "p": p, "r": r, "x": x, "v0": v0, "v1": v1,
    }


def generate_application_grid(spec: ApplicationGridSpec) -> Population:
    """A ratio-of-weighted-totals population with known ground truth."""
    a = application_grid_arrays(spec)
    if not np.any(a["r"] > 0):
        raise ValueError("grid produces no events, so the target ratio is undefined")
    aux = np.column_stack([a["glance"], a["decel"], a["max_speed"]])
    return make_population(
        ratio_of_weighted_totals(),
        aux,
        prior_weights=a["p"],
        r=a["r"],
        x=a["x"],
        aux_names=("glance", "deceleration", "max_speed"),
        info={"spec": spec, "case": a["case"]},
    )


SEVERITY_FACTORS = (("glance", False), ("deceleration", True), ("max_speed", False))
LEVERAGE_COLUMNS = ("glance", "deceleration")


def hajek_population(spec: SyntheticSpec) -> Population:
    return generate_synthetic(spec, hajek_mean())
