"""Optimal multinomial design when the study variable is known.

With pi proportional to |y| every draw reproduces the total exactly; with
the floor mixing used in practice the variance is tiny but not zero.
"""

import numpy as np

from activesampling import (
    draw_multinomial,
    exact_hh_covariance,
    hh_batch_total,
    optimal_scheme_known,
)
from activesampling.schemes import uniform_scheme

rng = np.random.default_rng(0)
y = rng.gamma(2.0, size=(500, 1))
t = y.sum()

for label, scheme in [
    ("uniform", uniform_scheme(500)),
    ("optimal, eps=1e-3", optimal_scheme_known(y, [1.0])),
    ("optimal, eps=0", optimal_scheme_known(y, [1.0], epsilon=0.0)),
]:
    sd = np.sqrt(exact_hh_covariance(y, scheme, 20)[0, 0])
    est = hh_batch_total(draw_multinomial(scheme, 20, rng), y)[0]
    print(f"{label:20s} exact SD {sd:10.4f}   one draw {est:10.4f}   (t = {t:.4f})")
