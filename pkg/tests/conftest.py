"""Shared test oracles: central finite differences against autodiff."""

import numpy as np

from memrl.nn import flatten_params


def finite_difference_grads(f, pset, h=1e-5):
    """Central-difference gradient of scalar f() w.r.t. every parameter in
    `pset`.  f must rebuild its graph from the current parameter values."""
    flat, unflatten = flatten_params(pset)
    grad = np.zeros_like(flat)
    for i in range(len(flat)):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        pset.load_values(unflatten(bumped))
        up = f()
        bumped[i] = flat[i] - h
        pset.load_values(unflatten(bumped))
        down = f()
        grad[i] = (up - down) / (2 * h)
    pset.load_values(unflatten(flat))
    return unflatten(grad)


def assert_grads_close(analytic, numeric, rel=1e-4, abs_floor=1e-6):
    """Per spec tolerance: relative error < rel, absolute < abs_floor when
    the analytic gradient is itself below abs_floor."""
    for name in numeric:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        assert a.shape == n.shape, name
        small = np.abs(a) < abs_floor
        if np.any(small):
            assert np.allclose(a[small], n[small], atol=abs_floor), name
        if np.any(~small):
            rel_err = np.abs(a[~small] - n[~small]) / np.abs(a[~small])
            assert rel_err.max() < rel, f"{name}: max rel err {rel_err.max():.2e}"
