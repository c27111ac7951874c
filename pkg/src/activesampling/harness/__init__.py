"""Synthetic populations and the repeated-subsampling benchmark."""

from .benchmark import (
    CSV_HEADER,
    ExperimentSpec,
    Method,
    ResultTable,
    estimator_baselines,
    persistent_significance,
    run_benchmark,
    run_coverage,
    run_experiments,
)
from .synthetic import (
    ApplicationGridSpec,
    Scenario,
    SyntheticSpec,
    generate_application_grid,
    generate_synthetic,
)
