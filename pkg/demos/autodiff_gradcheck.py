# # The tape autodiff under the transformer
#
# Every model in the package is built from a small reverse-mode autodiff over
# float64 numpy arrays. Each op records its parents and a backward closure;
# `backward` walks the tape in reverse topological order.
#
# Run with `python demos/autodiff_gradcheck.py`.

import numpy as np

from textsmooth import tensor as T

# ## A two-layer network by hand

rng = np.random.default_rng(0)
x = T.Tensor(rng.normal(size=(4, 3)))
w1 = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = T.Tensor(rng.normal(size=(5, 2)), requires_grad=True)
target = np.eye(2)[[0, 1, 1, 0]]


def loss():
    return T.cross_entropy(T.matmul(T.gelu(T.matmul(x, w1)), w2), target)


T.backward(loss())

# ## Checking against central differences
#
# Nudge every weight by +-h and compare the slope with the stored gradient.


def numeric(param, h=1e-5):
    grad = np.zeros_like(param.data)
    for idx in np.ndindex(param.shape):
        orig = param.data[idx]
        param.data[idx] = orig + h
        up = loss().item()
        param.data[idx] = orig - h
        down = loss().item()
        param.data[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


for name, p in (("w1", w1), ("w2", w2)):
    num = numeric(p)
    err = np.linalg.norm(p.grad - num) / (np.linalg.norm(p.grad) + np.linalg.norm(num))
    print(f"{name}: relative error {err:.2e}")

# ## Expected embeddings have the same gradient as lookups on one-hot rows

table = T.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
ids = np.array([1, 4, 4, 0])
T.backward(T.tsum(T.embedding(table, ids) * T.Tensor(np.arange(16.0).reshape(4, 4))))
g_ids = table.grad.copy()
table.grad = None
T.backward(T.tsum(T.expected_embedding(T.Tensor(np.eye(6)[ids]), table) * T.Tensor(np.arange(16.0).reshape(4, 4))))
print("identical gradients:", np.array_equal(g_ids, table.grad))
