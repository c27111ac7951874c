"""The adaptive loop on a synthetic population, with its iteration trace."""

from activesampling import LoopConfig, PopulationOracle, SurrogateConfig, run_active_sampling
from activesampling.harness.synthetic import SyntheticSpec, generate_synthetic

pop = generate_synthetic(SyntheticSpec(sigma=0.1, r2=0.75, seed=1))
cfg = LoopConfig(max_iterations=25, precision_target=0.01, batch_sizes=10,
                 surrogate=SurrogateConfig(seed=3), seed=3)
result = run_active_sampling(pop.auxiliaries, pop.characteristic, PopulationOracle(pop), cfg)

for tr in result.trace:
    se = "" if tr.std_error is None else f"{tr.std_error:.4f}"
    print(f"iter {tr.iteration:2d}  n={tr.cumulative_size:3d}  fallback={tr.used_fallback!s:5s}  "
          f"min pi {tr.min_probability:.2e}  theta {tr.theta_hat:.4f}  se {se}")
print("termination:", result.termination)
print(f"estimate {result.estimate.theta_hat:.4f}, truth {pop.responses.mean():.4f}")
