"""Flat ``key=value`` experiment configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys are errors, as are
repeated keys. Values are parsed by the key's type; lists are
comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError
from ..estimation import VarianceMethod
from ..surrogates import ModelKind
from .benchmark import ExperimentSpec, Method
from .synthetic import ApplicationGridSpec, Scenario, SyntheticSpec

FULL_SCALE_REPLICATIONS = 500


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _methods(text: str) -> tuple[Method, ...]:
    return tuple(Method(v.strip()) for v in text.split(",") if v.strip())


# key -> parser
KEYS = {
    "method": _methods,
    "characteristic": str,
    "batch_size": int,
    "n_max": int,
    "replications": int,
    "variance_method": VarianceMethod,
    "variance_methods": lambda t: tuple(VarianceMethod(v.strip()) for v in t.split(",")),
    "seed": int,
    "surrogate": ModelKind,
    "refit": str,
    "checkpoints": _int_list,
    "bootstrap_replicates": int,
    "alpha": float,
    "epsilon": float,
    "n_jobs": int,
    "full_scale": _bool,
    # population
    "population": str,
    "sigma": float,
    "r2": float,
    "scenario": Scenario,
    "population_size": int,
    "data_seed": int,
    "outcome": str,
    "cases": int,
}

_EXPERIMENT_KEYS = (
    "characteristic", "batch_size", "n_max", "replications", "variance_method",
    "seed", "surrogate", "refit", "checkpoints", "bootstrap_replicates", "alpha",
    "epsilon", "n_jobs",
)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: methods, one experiment template and a population."""

    methods: tuple[Method, ...] = (Method.SRS_LINEAR, Method.AS)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    population: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    application: ApplicationGridSpec = field(default_factory=ApplicationGridSpec)
    variance_methods: tuple[VarianceMethod, ...] = tuple(VarianceMethod)

    def build_population(self):
        from ..characteristics import hajek_mean
        from .synthetic import generate_application_grid, generate_synthetic

        if self.population == "application":
            return generate_application_grid(self.application)
        c = hajek_mean() if self.experiment.characteristic == "hajek" else None
        return generate_synthetic(self.synthetic, c)


def parse_lines(lines) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key=value, got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return parse_lines(text.splitlines())


def build_config(raw: dict[str, str]) -> RunConfig:
    """Turn string key/values into a validated :class:`RunConfig`."""
    values = {}
    for key, text in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = KEYS[key](text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None

    population = values.get("population", "synthetic")
    if population not in ("synthetic", "application"):
        raise ConfigError(f"population must be 'synthetic' or 'application', got {population!r}")
    exp_kw = {k: values[k] for k in _EXPERIMENT_KEYS if k in values}
    if population == "application":
        exp_kw.setdefault("characteristic", "ratio")
    if values.get("full_scale"):
        if "replications" in values:
            raise ConfigError("full_scale and replications are mutually exclusive")
        exp_kw["replications"] = FULL_SCALE_REPLICATIONS
    try:
        exp = ExperimentSpec(**exp_kw)
        syn = SyntheticSpec()
        syn_kw = {
            "sigma": values.get("sigma"),
            "r2": values.get("r2"),
            "scenario": values.get("scenario"),
            "n": values.get("population_size"),
            "seed": values.get("data_seed"),
        }
        syn = replace(syn, **{k: v for k, v in syn_kw.items() if v is not None})
        app_kw = {
            "outcome": values.get("outcome"),
            "cases": values.get("cases"),
            "seed": values.get("data_seed"),
        }
        app = replace(ApplicationGridSpec(), **{k: v for k, v in app_kw.items() if v is not None})
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    kw = {}
    if "method" in values:
        if not values["method"]:
            raise ConfigError("method list is empty")
        kw["methods"] = values["method"]
    if "variance_methods" in values:
        kw["variance_methods"] = values["variance_methods"]
    return RunConfig(experiment=exp, population=population, synthetic=syn, application=app, **kw)


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Read ``path`` (if given) and apply ``overrides`` on top of it."""
    raw = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    return build_config(raw)
