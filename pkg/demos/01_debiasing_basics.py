"""
Debiasing a function from label proportions
===========================================

Only the fraction of positives in each bag is observed.  The corrections in
``easyllp.estimators`` turn that into an unbiased estimate of ``E[g(x, y)]``.
"""

import numpy as np

from easyllp.data import gen_fig2, partition_into_bags
from easyllp.estimators import (
    debias_soft,
    debias_surrogate,
    sample_surrogate,
    soft_coefficients,
)

rng = np.random.default_rng(0)

###############################################################################
# A bag of size 4 with three positives.  With p = 0.5 the soft-label weights on
# g(x, 1) and g(x, 0) are 1.5 and -0.5.  Negative weights are expected.

c1, c0 = soft_coefficients(0.75, 4, 0.5)
print(f"coefficients on g1, g0: {c1:.2f}, {c0:.2f}")
print("debiased value:", debias_soft([0.0], [1.0], 0.75, 4, 0.5))

###############################################################################
# Draw many bags from x ~ U[0, 1], y = 1{x <= 0.5} and estimate
# E[1{x <= 0.5} y] = 0.5 from the first member of every bag.

k = 16
ds = gen_fig2(16 * 50_000, rng)
bags = partition_into_bags(ds, k, shuffle=True, rng=rng)
x = bags.features[:, 0, 0]
g1 = (x <= 0.5).astype(float)[:, None]
g0 = np.zeros_like(g1)
alpha = bags.positive_rates
p_hat = bags.estimate_prior().p

soft = debias_soft(g0, g1, alpha, k, p_hat)
y_tilde = sample_surrogate(alpha, rng)
surrogate = debias_surrogate(g0, g1, y_tilde, k, p_hat)

print(f"estimated prior      {p_hat:.4f}")
print(f"soft estimate        {soft.mean():.4f}  (variance {soft.var():.2f})")
print(f"surrogate estimate   {surrogate.mean():.4f}  (variance {surrogate.var():.2f})")

###############################################################################
# Both are close to 0.5, but replacing the random surrogate label by its
# conditional expectation removes a large share of the variance.
