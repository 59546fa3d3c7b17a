"""
Checking backprop against finite differences
=============================================

Every backward pass in the package is hand-written, so each one is compared
with central differences on small random instances.
"""
import numpy as np

from memcredit import Rng
from memcredit.nn import dense_backward, dense_forward, finite_diff_grad, init_params

rng = Rng(0)
layer = init_params(rng, 5, 3, "sigmoid")
x = rng.normal((5, 4))
c = rng.normal((3, 4))  # fixed cotangent: loss = sum(c * act)

pre, _ = dense_forward(layer, x)
gW, gb, gx = dense_backward(layer, x, pre, c)

###############################################################################
# The numerical gradient perturbs one entry at a time, in place.

def loss(_):
    return float(np.sum(c * dense_forward(layer, x)[1]))

for name, analytic, param in (("W", gW, layer.weights), ("b", gb, layer.bias), ("x", gx, x)):
    numeric = finite_diff_grad(loss, param)
    err = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    print(f"d loss / d {name}: relative error {err:.1e}")
