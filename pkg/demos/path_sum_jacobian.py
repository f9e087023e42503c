"""
Input Jacobians as sums over paths
==================================

For a bias-free ReLU network, d logit_j / d x_i equals the sum, over all
paths from input i to output j through active neurons, of the product of
the weights along the path. Checks this against backpropagation.
"""

import numpy as np

from dissect.nn import build_mlp, jacobian, jacobian_path_sum

net = build_mlp([4, 6, 5, 3], seed=1, bias=False)
x = np.random.default_rng(1).normal(size=4)

J = jacobian(net, x)
P = jacobian_path_sum(net, x)
print(J)
print("max difference", np.abs(J - P).max())

# biases add terms no path captures, so they are refused
try:
    jacobian_path_sum(build_mlp([4, 6, 3], seed=1, bias=True), x)
except ValueError as e:
    print("with biases:", e)
