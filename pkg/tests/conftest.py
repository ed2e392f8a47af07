"""Shared fixtures and the finite-difference gradient checker."""

import numpy as np
import pytest

from vistafuse import autodiff as ad
from vistafuse import synthgen


def numeric_grad(fn, arrays, h=1e-5):
    """Central-difference gradients of a scalar function of numpy arrays."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*arrays)
            flat[i] = orig - h
            down = fn(*arrays)
            flat[i] = orig
            gf[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def check_grads(build_loss, arrays, tol=1e-4, h=1e-5):
    """Compare autodiff gradients of ``build_loss`` against finite differences.

    ``build_loss`` maps a list of Tensors to a scalar Tensor; ``arrays`` are
    the underlying float64 numpy values (mutated in place by the checker).
    """
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        loss = build_loss(*tensors)
    ad.backward(loss, tape)

    def scalar(*vals):
        ts = [ad.Tensor(v) for v in vals]
        with ad.Tape():
            out = build_loss(*ts)
        return float(out.data)

    numeric = numeric_grad(scalar, arrays, h=h)
    for t, num in zip(tensors, numeric):
        assert t.grad is not None, "missing analytic gradient"
        err = np.abs(t.grad - num)
        bound = tol * (1.0 + np.abs(num))
        assert np.all(err <= bound), f"gradient mismatch: max err {err.max()}, bound {bound.min()}"


def away_from_kinks(rng, shape, margin=0.05):
    """Uniform values bounded away from 0 so relu/max kinks cannot flip."""
    signs = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(margin, 1.0, size=shape)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small generated dataset: 6 H-classes, 3 specimens, 1 sweep, 1 image."""
    out = tmp_path_factory.mktemp("tiny_ds")
    records = synthgen.generate_dataset(
        str(out),
        n_specimens_per_class=3,
        sweeps_per_specimen=1,
        images_per_specimen=1,
        master_seed=7,
        classes="H",
        image_px=(96, 80),
        sweep_samples=200,
    )
    return str(out), records
