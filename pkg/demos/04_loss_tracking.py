"""
Does the bag loss track the instance loss?
=========================================

Train with fresh bags every epoch and compare the soft-corrected loss computed
from proportions with the true instance loss on the same minibatches.
"""

import numpy as np

from easyllp.data import gen_gaussian_blobs
from easyllp.experiments import loss_tracking

ds = gen_gaussian_blobs(10_000, 10, 3.29, 0.5, np.random.default_rng(5))
table = loss_tracking(ds, k=32, epochs=20, replicas=10)

print("epoch  true (mean, std)      estimate (mean, std)")
for epoch, tm, ts, em, es in table.as_rows()[::4]:
    print(f"{epoch:5d}  {tm:.4f} +- {ts:.4f}    {em:.4f} +- {es:.4f}")

inside = table.within_band(2.0).mean()
print(f"epochs inside the 2-stderr band: {inside:.0%}")

###############################################################################
# The estimate is unbiased but noisier: its spread across replicas is much
# larger than that of the true loss.
