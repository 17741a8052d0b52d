"""Finite-difference gradient verification.

Every differentiable op in the package is checked against central
differences (h = 1e-5, float64) by the test suite; this module holds the
shared machinery so the acceptance gate can reuse it.
"""

import numpy as np


def numeric_gradient(f, x, h=1e-5):
    """Central-difference gradient of the scalar ``f()`` w.r.t. array ``x``.

    ``x`` is perturbed in place and restored; ``f`` must re-read it on each
    call (typical usage closes over the tensor whose ``.data`` is ``x``).
    """
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b):
    """Scale-free distance: ||a - b|| / max(||a|| + ||b||, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(make_loss, tensors, h=1e-5):
    """Compare analytic and numeric gradients for every tensor in ``tensors``.

    ``make_loss()`` rebuilds the graph from the tensors' current data and
    returns a scalar Tensor. Returns the worst relative error observed.
    """
    loss = make_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = numeric_gradient(lambda: make_loss().item(), t.data, h=h)
        worst = max(worst, rel_error(a, n))
    return worst


def spot_check_gradients(make_loss, tensors, n_coords, rng, h=1e-5):
    """Check ``n_coords`` randomly chosen parameter coordinates.

    Cheap variant for large models: full finite differencing of a network
    is quadratic in parameter count, so sample coordinates instead.
    Returns the worst relative error over the sampled coordinates.
    """
    loss = make_loss()
    loss.backward()
    sizes = np.array([t.data.size for t in tensors])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for p in picks:
        ti = int(np.searchsorted(bounds, p, side="right"))
        off = int(p - (bounds[ti - 1] if ti > 0 else 0))
        t = tensors[ti]
        flat = t.data.ravel()
        orig = flat[off]
        flat[off] = orig + h
        fp = make_loss().item()
        flat[off] = orig - h
        fm = make_loss().item()
        flat[off] = orig
        numeric = (fp - fm) / (2.0 * h)
        analytic = t.grad.ravel()[off]
        worst = max(worst, rel_error(np.array([analytic]), np.array([numeric])))
    return worst
