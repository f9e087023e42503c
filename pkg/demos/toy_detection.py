"""
Detecting adversarial inputs on the toy task
============================================

Trains the small conv net on 3x3 plus/corners images, attacks it with PGD,
and scores every input by how its persistence diagram compares with those
of clean inputs.
"""

import numpy as np
from scipy.stats import ttest_ind

from dissect.nn import accuracy, forward
from dissect.graph import apply_mask, induce, select_under_optimized
from dissect.persistence import pd0
from dissect.pipeline import (
    Cache, ExperimentConfig, get_network, load_data, match_input_shape,
    point_counts, run_detection,
)

config = ExperimentConfig(seed=0)
cache = Cache()

# the network trains in well under a second and is cached afterwards
net = get_network(config, cache)
train, val, test = (match_input_shape(net, d) for d in load_data(config))
print("test accuracy", accuracy(net, test.x, test.y))

# one input, one graph: keep the 30% of parameters per layer whose
# magnitude grew least during training, then run the filtration
mask = select_under_optimized(net, config.q, criterion="mi")
_, record = forward(net, test.x[0])
graph = apply_mask(induce(net, record), mask)
diagram = pd0(graph)
print(len(graph), "edges kept,", len(diagram), "diagram points")
print(diagram.points)

# full detector: one-class SVM on a sliced-Wasserstein kernel
report = run_detection(config, cache)
print(f"AUC {report.auc:.3f}  interval [{report.ci_low:.3f}, {report.ci_high:.3f}]")
print("attack success rate", report.details["attack_success_rate"])

# adversarial inputs also change how many components the graph has
clean, adv = point_counts(config, cache)
print("mean point count clean %.2f, adversarial %.2f" % (clean[:, 0].mean(), adv[:, 0].mean()))
print("Welch p-value", ttest_ind(clean[:, 0], adv[:, 0], equal_var=False).pvalue)
