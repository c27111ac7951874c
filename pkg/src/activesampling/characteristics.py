"""Target characteristics ``theta = h(t)`` of population totals.

A characteristic owns the mapping from raw study variables to the response
vectors ``y_i`` whose column sums form the totals ``t``. Everything
downstream (schemes, estimators, the active loop) only sees the mapped
``(N, d)`` response matrix.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import numpy.typing as npt

from .errors import DomainError

FloatArray = npt.NDArray[np.float64]


class Kind(str, enum.Enum):
    LINEAR_TOTAL = "total"
    LINEAR_MEAN = "linear"
    HAJEK_MEAN = "hajek"
    RATIO = "ratio"


_DIMENSION = {
    Kind.LINEAR_TOTAL: 1,
    Kind.LINEAR_MEAN: 1,
    Kind.HAJEK_MEAN: 2,
    Kind.RATIO: 2,
}


@dataclass(frozen=True)
class Characteristic:
    """A differentiable function of a d-vector of totals.

    ``population_size`` is only used by ``LINEAR_MEAN`` (h(u) = u / N).
    """

    kind: Kind
    population_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.LINEAR_MEAN:
            if self.population_size is None or self.population_size < 1:
                raise ValueError("LinearMean needs a positive population_size")

    @property
    def dimension(self) -> int:
        return _DIMENSION[self.kind]

    @property
    def is_ratio(self) -> bool:
        return self.kind in (Kind.HAJEK_MEAN, Kind.RATIO)

    def _check(self, totals) -> FloatArray:
        u = np.asarray(totals, dtype=float).reshape(-1)
        if u.shape != (self.dimension,):
            raise ValueError(
                f"{self.kind.value} expects {self.dimension} totals, got shape {u.shape}"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError("totals must be finite")
        if self.is_ratio and u[0] == 0.0:
            raise DomainError("denominator total is zero")
        return u

    def value(self, totals) -> float:
        u = self._check(totals)
        if self.kind is Kind.LINEAR_TOTAL:
            return float(u[0])
        if self.kind is Kind.LINEAR_MEAN:
            return float(u[0] / self.population_size)
        return float(u[1] / u[0])

    def gradient(self, totals) -> FloatArray:
        u = self._check(totals)
        if self.kind is Kind.LINEAR_TOTAL:
            return np.ones(1)
        if self.kind is Kind.LINEAR_MEAN:
            return np.array([1.0 / self.population_size])
        return np.array([-u[1] / u[0] ** 2, 1.0 / u[0]])

    def map_responses(self, y=None, *, p=None, r=None, x=None) -> FloatArray:
        """Build the ``(N, d)`` response matrix from raw study variables.

        Scalar kinds and the Hajek mean take ``y``. The ratio of weighted
        totals takes prior weights ``p``, a 0/1 event indicator ``r`` and the
        conditional outcome ``x``, giving ``y_i = p_i * (r_i, r_i * x_i)``.
        ``x`` is ignored wherever ``r_i = 0``, so it may hold NaN there.
        """
        if self.kind is Kind.RATIO:
            if r is None or x is None:
                raise ValueError("ratio characteristic needs r and x")
            r = np.asarray(r, dtype=float)
            x = np.asarray(x, dtype=float)
            p = np.ones_like(r) if p is None else np.asarray(p, dtype=float)
            rx = np.where(r != 0.0, r * np.nan_to_num(x), 0.0)
            return np.column_stack([p * r, p * rx])
        if y is None:
            raise ValueError(f"{self.kind.value} characteristic needs y")
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.kind is Kind.HAJEK_MEAN:
            return np.column_stack([np.ones_like(y), y])
        return y[:, None].copy()


def linear_total() -> Characteristic:
    return Characteristic(Kind.LINEAR_TOTAL)


def linear_mean(population_size: int) -> Characteristic:
    return Characteristic(Kind.LINEAR_MEAN, population_size)


def hajek_mean() -> Characteristic:
    return Characteristic(Kind.HAJEK_MEAN)


def ratio_of_weighted_totals() -> Characteristic:
    return Characteristic(Kind.RATIO)


def eval_characteristic(c: Characteristic, totals) -> float:
    return c.value(totals)


def eval_gradient(c: Characteristic, totals) -> FloatArray:
    return c.gradient(totals)


@dataclass(frozen=True)
class Population:
    """A finite population: mapped responses, auxiliaries and prior weights.

    ``outcomes`` keeps the raw study variables (``y``, or ``r`` and ``x``)
    so the population can be re-mapped for another characteristic.
    ``aux_names`` labels the auxiliary columns; baselines that need a named
    column (severity factors, say) look it up there.
    """

    responses: FloatArray
    auxiliaries: FloatArray
    prior_weights: FloatArray | None = None
    outcomes: Mapping[str, FloatArray] = field(default_factory=dict)
    aux_names: tuple[str, ...] = ()
    characteristic: Characteristic | None = None
    info: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        y = np.asarray(self.responses, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        z = np.asarray(self.auxiliaries, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 2 or y.shape[0] < 1 or y.shape[1] < 1:
            raise ValueError("responses must be an (N, d) matrix with N, d >= 1")
        if z.shape[0] != y.shape[0]:
            raise ValueError("auxiliaries must have one row per element")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise ValueError("responses and auxiliaries must be finite")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "auxiliaries", z)
        if self.prior_weights is not None:
            p = np.asarray(self.prior_weights, dtype=float).reshape(-1)
            if p.shape != (y.shape[0],) or not np.all(p > 0):
                raise ValueError("prior_weights must be N strictly positive values")
            object.__setattr__(self, "prior_weights", p)
        names = tuple(self.aux_names)
        if names and len(names) != z.shape[1]:
            raise ValueError("aux_names must label every auxiliary column")
        object.__setattr__(self, "aux_names", names)

    @property
    def size(self) -> int:
        return self.responses.shape[0]

    @property
    def dimension(self) -> int:
        return self.responses.shape[1]

    @property
    def weights(self) -> FloatArray:
        """Prior weights, all ones when none were given."""
        if self.prior_weights is None:
            return np.ones(self.size)
        return self.prior_weights

    def aux_column(self, name: str) -> FloatArray:
        try:
            return self.auxiliaries[:, self.aux_names.index(name)]
        except ValueError:
            raise KeyError(f"no auxiliary column named {name!r}") from None

    def with_characteristic(self, c: Characteristic) -> "Population":
        """Re-map the stored raw outcomes for another characteristic."""
        if c.kind is Kind.RATIO:
            mapped = c.map_responses(
                p=self.prior_weights, r=self.outcomes["r"], x=self.outcomes["x"]
            )
        else:
            mapped = c.map_responses(self.outcomes["y"])
        return replace(self, responses=mapped, characteristic=c)


def make_population(
    c: Characteristic,
    auxiliaries,
    *,
    y=None,
    prior_weights=None,
    r=None,
    x=None,
    aux_names: tuple[str, ...] = (),
    info: Mapping[str, object] | None = None,
) -> Population:
    """Map raw study variables through ``c`` and bundle them as a Population."""
    if c.kind is Kind.RATIO:
        responses = c.map_responses(p=prior_weights, r=r, x=x)
        outcomes = {"r": np.asarray(r, dtype=float), "x": np.asarray(x, dtype=float)}
    else:
        responses = c.map_responses(y)
        outcomes = {"y": np.asarray(y, dtype=float).reshape(-1)}
    return Population(
        responses=responses,
        auxiliaries=auxiliaries,
        prior_weights=prior_weights,
        outcomes=outcomes,
        aux_names=aux_names,
        characteristic=c,
        info=dict(info or {}),
    )


def true_totals(pop: Population, c: Characteristic) -> FloatArray:
    """Ground-truth totals by full enumeration of the population."""
    if pop.dimension != c.dimension:
        raise ValueError(
            f"population has d={pop.dimension} but {c.kind.value} needs d={c.dimension}"
        )
    return pop.responses.sum(axis=0)


def true_value(pop: Population, c: Characteristic) -> float:
    return c.value(true_totals(pop, c))
