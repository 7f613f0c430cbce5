"""Sample a fractional field, mollify it, and watch the renormalized error shrink with eps.

Run: python demos/04_field_convergence.py   (about half a minute)
"""
import numpy as np

from chaosbound.convergence import (ConvergenceConfig, a_m_coefficient, absolute, convergence_error,
                                    higher_chaos_scaling, power, sigma2_limit)
from chaosbound.covariance import fractional_covariance
from chaosbound.fields import Grid, mollified_lattice_variance, mollify_field, sample_field
from chaosbound.scaling import bump

alpha = 0.4
model = fractional_covariance(alpha)
grid = Grid.interval(0.0, 4.0, 4096)
field = sample_field(model, grid, seed=3)
for eps in (0.25, 0.0625, 0.015625):
    sm = mollify_field(field, bump(), eps)
    v = mollified_lattice_variance(model, grid.spacing, bump(), eps)
    print(f"eps={eps:<9g} sample var {sm.values.var():7.3f}   exact {v:7.3f}   eps^alpha*exact {eps**alpha * v:.4f}")
s2 = sigma2_limit(model.g)
print(f"limit variance sigma^2 = {s2:.5f}")
for F in (power(2), power(4), absolute()):
    print(f"a_2({F.name}) = {a_m_coefficient(F, s2, 2):.6f}")

# A small Monte-Carlo run: error moments should decay like a positive power of eps.
cfg = ConvergenceConfig(F=(power(2), absolute()), samples=100, h=2.0**-10, length=6.0,
                        eps_list=(2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6), bootstrap=300)
rep = convergence_error(cfg)
for name, s in rep.slopes.items():
    print(f"{name:4s} eps-slope {s['slope']:.3f}  95% CI [{s['ci_low']:.3f}, {s['ci_high']:.3f}]")

# Third chaos: the exact second moment scales at least like eps^(m alpha).
sc = higher_chaos_scaling(2, 1, [2.0**-k for k in range(6, 10)], [0.5, 0.25], alpha=0.3)
print("exact eps-slopes:", [round(s, 3) for s, _ in sc.eps_slopes], " (threshold 0.6)")
