"""Design, martingale and bootstrap variance estimates for one sample."""

import numpy as np

from activesampling import SampleHistory, VarianceMethod, draw_multinomial, estimate, hajek_mean
from activesampling.estimation import BatchRecord
from activesampling.schemes import scheme_from_weights

rng = np.random.default_rng(1)
N = 2000
y = rng.normal(3.0, 1.0, size=N) + np.linspace(0, 2, N)
c = hajek_mean()
responses = c.map_responses(y)
scheme = scheme_from_weights(np.linspace(1, 3, N))

history = SampleHistory()
for _ in range(20):
    history.append(BatchRecord.from_draw(draw_multinomial(scheme, 10, rng), responses))

print(f"true mean {y.mean():.4f}")
for method in VarianceMethod:
    est = estimate(history, c, method, rng=np.random.default_rng(2))
    print(f"{method.value:10s} theta {est.theta_hat:.4f}  se {est.std_error:.4f}  "
          f"ci [{est.ci_low:.4f}, {est.ci_high:.4f}]")
