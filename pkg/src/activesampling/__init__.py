"""Model-assisted active sampling for finite population inference."""

from .characteristics import (
    Characteristic,
    Kind,
    Population,
    eval_characteristic,
    eval_gradient,
    hajek_mean,
    linear_mean,
    linear_total,
    make_population,
    ratio_of_weighted_totals,
    true_totals,
    true_value,
)
from .errors import (
    ActiveSamplingError,
    BatchTooSmall,
    ConfigError,
    DegenerateScheme,
    DomainError,
    FitFailed,
    OracleFailure,
    PreconditionError,
    SingularDesign,
)
from .estimation import (
    PooledEstimate,
    SampleHistory,
    VarianceMethod,
    confidence_interval,
    delta_variance,
    estimate,
    hh_batch_total,
    pool_totals,
)
from .loop import (
    LoopConfig,
    LoopResult,
    PopulationOracle,
    pilot_sample_size,
    run_active_sampling,
)
from .schemes import (
    BaselineKind,
    SamplingScheme,
    application_scheme,
    baseline_scheme,
    draw_multinomial,
    exact_hh_covariance,
    optimal_scheme_known,
    optimal_scheme_predictive,
)
from .surrogates import ModelKind, SurrogateConfig, fit_ratio_surrogate, fit_surrogate

__version__ = "0.1.0"
