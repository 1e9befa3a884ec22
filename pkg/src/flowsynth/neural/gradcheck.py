"""Central finite-difference checks for layers and loss heads."""
from __future__ import annotations

import numpy as np


def rel_error(a, b):
    """Norm-wise relative error ||a - b|| / max(||a|| + ||b||, tiny)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, h=1e-3):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_layer(layer, x, rng, h=1e-3, train=True):
    """Compare analytic and numeric gradients of ``sum(R * layer(x))``.

    ``layer`` must already be initialised in float64. Returns the worst
    relative error over the input gradient and every parameter gradient.
    """
    out = layer.forward(x, train=train)
    weights = rng.standard_normal(out.shape)

    def loss():
        return float((layer.forward(x, train=train) * weights).sum())

    layer.zero_grad()
    layer.forward(x, train=train)
    dx = layer.backward(weights)
    errors = {"input": rel_error(dx, numeric_grad(loss, x, h))}
    for name, p in layer.params.items():
        errors[name] = rel_error(layer.grads[name], numeric_grad(loss, p, h))
    return errors
