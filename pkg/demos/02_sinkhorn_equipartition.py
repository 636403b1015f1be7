"""
Balanced pseudo-labels from Sinkhorn scaling
============================================

If every node simply took the prototype with the highest score, nothing
would stop all nodes from crowding onto one prototype. Sinkhorn scaling
turns the scores into a transport plan whose column mass is (nearly) equal,
so the resulting soft labels stay spread across prototypes.

This script shows how fast the column marginals converge, and how much more
balanced the assignments are than a plain softmax.
"""

import numpy as np

from scrl.sinkhorn import SinkhornConfig, marginal_errors, pseudo_labels, sinkhorn_assign
from scrl.tensor import constant, row_softmax

rng = np.random.default_rng(0)
n, b = 1000, 12

# %%
# Scores with a strong bias: prototype 0 is close to every node.
x = rng.standard_normal((n, 64))
c = rng.standard_normal((64, b))
c[:, 0] = x.mean(axis=0) * 8
x /= np.linalg.norm(x, axis=1, keepdims=True)
c /= np.linalg.norm(c, axis=0, keepdims=True)
z = x @ c

softmax = row_softmax(constant(z), 0.05).value
print("hard argmax of plain softmax, nodes per prototype:")
print(np.bincount(softmax.argmax(axis=1), minlength=b))

# %%
# Column marginal error against the number of scaling rounds. Each round
# ends on a row scaling, so row sums are exact after every round.
print("\n   p   row error   column error")
for p in (1, 2, 3, 5, 10, 30, 100):
    q = sinkhorn_assign(z, SinkhornConfig(iterations=p, epsilon=0.05))
    row, col = marginal_errors(q)
    print(f"{p:4d}   {row:.1e}     {col:.2e}   (target column mass {1 / b:.4f})")

q = pseudo_labels(sinkhorn_assign(z, SinkhornConfig(iterations=5)))
print("\nhard argmax of Sinkhorn pseudo-labels (p=5), nodes per prototype:")
print(np.bincount(q.argmax(axis=1), minlength=b))

# %%
# Smaller epsilon makes the plan sharper (closer to a hard assignment) but
# slower to converge; larger epsilon blurs it toward uniform.
for eps in (0.02, 0.05, 0.2, 1.0):
    q = pseudo_labels(sinkhorn_assign(z, SinkhornConfig(iterations=5, epsilon=eps)))
    entropy = -(q * np.log(q + 1e-30)).sum(axis=1).mean()
    print(f"epsilon {eps:5.2f}: mean row entropy {entropy:.3f} (uniform {np.log(b):.3f})")
