"""A small eRMSE comparison of AS against the fixed designs.

Uses 40 replications so it finishes in well under a minute; the CLI
``run-experiment`` subcommand produces the same table at full scale.
"""

from activesampling.harness.benchmark import ExperimentSpec, run_experiments
from activesampling.harness.synthetic import SyntheticSpec, generate_synthetic

pop = generate_synthetic(SyntheticSpec(sigma=0.1, r2=0.9, seed=1))
exp = ExperimentSpec(replications=40, n_max=150, checkpoints=(50, 100, 150))
table = run_experiments(pop, exp, ["SRS-linear", "ImportanceAux", "Ratio", "AS"])

for row in table.rows:
    print(f"{row['method']:14s} n={row['n']:3d}  eRMSE {row['ermse']:.4f} +/- {row['ermse_se']:.4f}")
print("first persistently significant n vs SRS:", table.meta["persistent_significance"])
