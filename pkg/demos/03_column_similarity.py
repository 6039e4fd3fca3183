"""The multi-column variance loss on hand-made branch outputs.

Each branch output is reduced to an attention vector (the channel mean at
every pixel). The loss is the average cosine between each vector and the
mean of the others, so redundant columns score near 1 and columns looking
at disjoint regions score 0.
"""

import numpy as np

from psnet import tensor as T
from psnet.losses import attention_vector, variance_loss
from psnet.tensor import Tensor

rng = np.random.default_rng(3)


def loss(branches):
    return variance_loss([[[Tensor(b, dtype=np.float64) for b in branches]]]).item()


same = rng.random((4, 6, 6))
print(f"four identical branches      L_M = {loss([same] * 4):.4f}")

quadrants = []
for q in range(4):
    b = np.zeros((4, 6, 6))
    b[:, (q // 2) * 3 : (q // 2) * 3 + 3, (q % 2) * 3 : (q % 2) * 3 + 3] = rng.random((4, 3, 3)) + 0.1
    quadrants.append(b)
print(f"four disjoint quadrants      L_M = {loss(quadrants):.4f}")
print(f"four random branches         L_M = {loss([rng.random((4, 6, 6)) for _ in range(4)]):.4f}")

# Gradient descent on the branches directly pushes them apart.
params = [Tensor(rng.random((4, 6, 6)), dtype=np.float64, requires_grad=True) for _ in range(4)]
for step in range(201):
    value = variance_loss([[[T.relu(p) for p in params]]])
    T.backward(value)
    for p in params:
        p.data -= 0.5 * p.grad
        p.grad = None
    if step % 50 == 0:
        print(f"step {step:3d}: L_M = {value.item():.4f}")

vecs = np.array([attention_vector(T.relu(p)).data for p in params])
print("\nwhich branch dominates each pixel after descent:")
print(vecs.argmax(axis=0).reshape(6, 6))
