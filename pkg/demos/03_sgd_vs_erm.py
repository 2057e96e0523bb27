"""
Training from bags: pick-one SGD and minibatch ERM
=================================================

Both learners see only bag proportions.  The event-level run uses true labels
and serves as the reference.
"""

import numpy as np

from easyllp.data import gen_gaussian_blobs, partition_into_bags
from easyllp.models import evaluate
from easyllp.trainers import (
    ErmConfig,
    SgdConfig,
    SgdMode,
    erm_minibatch,
    sgd_pick_one,
    train_event_level,
)

rng = np.random.default_rng(3)
train = gen_gaussian_blobs(2**14, 10, 3.29, 0.5, rng)
test = gen_gaussian_blobs(2**13, 10, 3.29, 0.5, rng)

event = train_event_level(train, ErmConfig(epochs=10))
print(f"event level           test accuracy {evaluate(event.final_model, test).accuracy:.4f}")

for k in (4, 64):
    bags = partition_into_bags(train, k, shuffle=True, rng=np.random.default_rng(k))
    prior = bags.estimate_prior()
    erm = erm_minibatch(bags, ErmConfig(epochs=10), prior=prior)
    line = f"k={k:<3d} soft ERM        test accuracy {evaluate(erm.final_model, test).accuracy:.4f}"
    print(line)
    for mode in SgdMode:
        sgd = sgd_pick_one(bags, SgdConfig(mode=mode, passes=5), prior)
        acc = evaluate(sgd.final_model, test).accuracy
        print(f"k={k:<3d} {mode.value + ' SGD':15s} test accuracy {acc:.4f}")

###############################################################################
# Pick-one SGD uses one example per bag per step, so at large k it has seen
# far fewer examples than ERM in the same number of passes.
