"""Exact Gaussian moments, and a product of characteristic functions with low chaoses removed.

Run: python demos/01_wick_calculus.py
"""
import numpy as np

from chaosbound.bounds import mc_cross_check
from chaosbound.covariance import GaussianVector
from chaosbound.gaussian import isserlis_moment, rhs_moment, subtracted_product_expr, wick_moment

C = np.array([[1.0, 0.6, 0.2],
              [0.6, 1.2, 0.4],
              [0.2, 0.4, 0.9]])

# Plain moments come from summing over all pairings. Wick-ordered moments drop the
# pairings of a point with itself.
print("E[X0^2 X1^2]          =", isserlis_moment(C, (2, 2, 0)))
print("E[X0^<2> X1^<2>]      =", wick_moment(C, (2, 2, 0)), " (2 C01^2 =", 2 * C[0, 1] ** 2, ")")
print("E[X0^<2> X1 X2]       =", wick_moment(C, (2, 1, 1)))

# Remove the mean of exp(i theta X_j) at each point and take the expectation of the
# product. The result is a finite sum of polynomials times Gaussians in theta.
expr = subtracted_product_expr(C, 1, 0)
print("\nexact expression:", expr)
for theta in (0.5, 1.0, 2.0, 4.0):
    exact = complex(expr(theta))
    mc = mc_cross_check(GaussianVector(np.zeros(3), C), theta, 1, 0, samples=200_000, seed=1)
    print(f"theta={theta:3.1f}  exact={exact.real:+.6f}  MC={mc.value.real:+.6f} +- {mc.stderr.real:.6f}")

# The right-hand side replaces each factor by the Wick powers of order m and m + 1.
for m in range(3):
    print(f"m={m}: E prod (X^<m> + X^<m+1>) = {rhs_moment(C, m):.6f}")
