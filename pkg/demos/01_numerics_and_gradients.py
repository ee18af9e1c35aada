"""Tour of the numeric core: cosine similarity, hand-rolled MLPs whose
analytic gradients are checked against finite differences, and the PSD
square-root trace behind the Frechet metric."""

import numpy as np

from emosup.numerics import (cosine_similarity, init_mlp, mlp_backward,
                             mlp_forward, psd_sqrt_trace, sgd_step)

rng = np.random.default_rng(0)

print("== cosine similarity ==")
print("parallel      :", cosine_similarity([1, 0], [2, 0]))
print("orthogonal    :", cosine_similarity([1, 0], [0, 1]))
print("[1,2] vs [2,1]:", cosine_similarity([1, 2], [2, 1]))

print("\n== MLP with analytic gradients ==")
net = init_mlp([6, 8, 4], rng)
x = rng.standard_normal(6)
u = rng.standard_normal(4)
out, cache = mlp_forward(net, x)
grads = mlp_backward(net, cache, u)

# spot-check one weight against central finite differences
h = 1e-5
layer = net.layers[0]
orig = layer.weights[2, 3]
layer.weights[2, 3] = orig + h
up = float(mlp_forward(net, x)[0] @ u)
layer.weights[2, 3] = orig - h
down = float(mlp_forward(net, x)[0] @ u)
layer.weights[2, 3] = orig
fd = (up - down) / (2 * h)
print(f"analytic dL/dW[2,3] = {grads.weight_grads[0][2, 3]:+.8f}")
print(f"finite-difference   = {fd:+.8f}")

stepped = sgd_step(net, grads, lr=0.1)
print("first weight before/after SGD:",
      net.layers[0].weights[0, 0], "->", stepped.layers[0].weights[0, 0])

print("\n== PSD square-root trace ==")
m = rng.standard_normal((5, 5))
a = m @ m.T / 5
print("Tr((a^1/2 a a^1/2)^1/2) =", psd_sqrt_trace(a, a))
print("Tr(a)                   =", float(np.trace(a)), "(should match)")
