"""Finite-difference oracle shared by the gradient tests."""

import numpy as np


def numerical_grad(f, array, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``array`` (mutated in place)."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        orig = array[idx]
        array[idx] = orig + h
        up = f()
        array[idx] = orig - h
        down = f()
        array[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def model_gradient_error(form, seed=0):
    """Relative error between backprop and central differences for a tiny model.

    ``form`` is ``"ids"`` or ``"distribution"``.  The loss combines the MLM
    head and the classifier so every parameter receives gradient.
    """
    from textsmooth import tensor as T
    from textsmooth import transformer as tf

    cfg = tf.ModelConfig(n_layers=1, emb_size=8, n_heads=2, ffn_size=16, vocab_size=12, max_seq_len=6, n_labels=3)
    params = tf.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    # larger weights than the 0.02 init so the check is not dominated by near-zero terms
    for t in params:
        t.data += rng.normal(scale=0.3, size=t.shape)
    ids = rng.integers(5, 12, size=(2, 6))
    mask = np.array([[1, 1, 1, 1, 1, 0], [1, 1, 1, 1, 1, 1]])
    targets = np.eye(12)[rng.integers(5, 12, size=(2, 6))]
    labels = np.eye(3)[[0, 2]]
    dist = rng.dirichlet(np.ones(12), size=(2, 6))

    def loss():
        x = ids if form == "ids" else dist
        hidden = tf.forward_encoder(params, tf.embed_input(x, params), mask)
        mlm = T.cross_entropy(tf.mlm_logits(hidden, params).reshape(12, 12), targets.reshape(12, 12))
        return mlm + T.cross_entropy(tf.classify(hidden, params), labels)

    params.zero_grad()
    T.backward(loss())
    # rows must stay stochastic, so the distribution itself is not perturbed
    leaves = list(params)
    analytic = np.concatenate([t.grad.ravel() for t in leaves])
    numeric = np.concatenate([numerical_grad(lambda: loss().item(), t.data).ravel() for t in leaves])
    return relative_error(analytic, numeric)


ACCEPTANCE_LINES = []


class criterion:
    """Context manager that records one PASS/FAIL line per acceptance criterion.

    Put measured values into ``self.detail`` inside the block; they are shown
    on the line either way.
    """

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        import time

        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        status = "PASS" if exc_type is None else "FAIL"
        secs = time.perf_counter() - self.start
        line = f"criterion {self.number} {status}: {self.title} [{self.detail}] ({secs:.1f}s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False
