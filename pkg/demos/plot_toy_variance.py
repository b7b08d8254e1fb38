"""
Gradient variance of a single ReLU unit
=======================================

For ``E = 0.5 * (relu(a x) - t)**2`` the gradient in ``a`` has variance
``x**2 * (Var f + Var t)``. A zero target (feature-norm penalty) adds
nothing, while uniform targets on ``[0, 2m)`` add ``m**2 / 3``.
"""

from ptrlab.toy import Constant, Uniform, fnp_vs_ptr_variance, variance_experiment

res = variance_experiment(Uniform(0, 1), Uniform(0, 2), n=1_000_000, seed=0)
print(f"empirical {res.empirical_var:.5f}  predicted {res.predicted_var:.5f}  gap {res.relative_gap:.2%}")

res = variance_experiment(Uniform(0, 1), Constant(0.0), n=1_000_000, seed=0)
print(f"zero target: empirical {res.empirical_var:.5f}  predicted {res.predicted_var:.5f}")

###############################################################################
# The extra variance grows with the square of the target mean.
for m in (0.5, 1.0, 2.0, 4.0):
    var_fnp, var_ptr = fnp_vs_ptr_variance(Uniform(0, 1), m, n=500_000, seed=1)
    print(f"m={m:<4} extra variance {var_ptr - var_fnp:.4f}  (m^2/3 = {m * m / 3:.4f})")
