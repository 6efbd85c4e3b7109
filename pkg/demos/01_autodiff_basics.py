"""Gradients from the tensor core, checked against finite differences.

Every inversion in this package rests on one primitive: given a scalar
objective built from tensor operations, backward() fills in exact
gradients for the designated inputs.  This script builds a small
objective, differentiates it both ways, and shows the accumulate/zero
semantics the optimizer loop relies on.
"""

import numpy as np

from invlab.autodiff import Tensor, finite_difference

rng = np.random.default_rng(0)

# a toy objective: project x through a fixed matrix, squash, and score
w = rng.standard_normal((5, 12))
x0 = rng.standard_normal(12)


def objective(t):
    hidden = (Tensor(w) @ t).tanh()
    return (hidden * hidden).sum()


x = Tensor(x0, requires_grad=True)
loss = objective(x)
loss.backward()
print(f"loss                 {loss.item():.6f}")

fd = finite_difference(lambda a: objective(Tensor(a)).item(), x0)
rel = np.max(np.abs(fd - x.grad) / np.maximum(np.abs(fd), 1e-12))
print(f"max FD disagreement  {rel:.2e}   (central differences, h=1e-5)")

# backward accumulates until grads are zeroed: two passes double the grad
first = x.grad.copy()
objective(x).backward()
print(f"after second pass    grad == 2x first pass: {np.array_equal(x.grad, 2 * first)}")
x.zero_grad()
print(f"after zero_grad      grad is {x.grad}")

# gradients flow only into requires_grad leaves; constants stay clean
const = Tensor(rng.standard_normal(12))
(const * x).sum().backward()
print(f"constant operand     grad is {const.grad} (never tracked)")
