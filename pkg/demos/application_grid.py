"""Ratio-of-totals estimation on the simulated application grid."""

from activesampling import true_value
from activesampling.harness.benchmark import ExperimentSpec, run_coverage, run_experiments
from activesampling.harness.synthetic import ApplicationGridSpec, generate_application_grid

pop = generate_application_grid(ApplicationGridSpec())
print(f"{pop.size} grid elements, target {true_value(pop, pop.characteristic):.4f}")

exp = ExperimentSpec(characteristic="ratio", replications=20, n_max=200, refit="thinned",
                     checkpoints=(50, 100, 200))
table = run_experiments(pop, exp, ["SRS", "Density", "Severity", "Leverage", "AS"])
for row in table.rows:
    print(f"{row['method']:9s} n={row['n']:3d}  eRMSE {row['ermse']:.4f}")

cov = run_coverage(pop, exp, ["design", "bootstrap"])
for row in cov.rows:
    print(f"{row['estimator']:18s} n={row['n']:3d}  coverage {row['coverage']:.2f}")
