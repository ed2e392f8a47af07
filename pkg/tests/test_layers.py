"""Unit tests for layers, optimizer, schedule, and checkpoints."""

import numpy as np
import pytest

from vistafuse import autodiff as ad
from vistafuse.errors import ContractError, ParameterError, ParseError, ShapeError
from vistafuse.layers import (
    CHECKPOINT_MAGIC,
    Adam,
    ConvBlock,
    DenseModule,
    he_uniform,
    load_checkpoint,
    lr_schedule,
    save_checkpoint,
)


def test_he_uniform_bounds():
    rng = np.random.default_rng(0)
    w = he_uniform(rng, 24, (24, 1000))
    limit = np.sqrt(6.0 / 24)
    assert np.all(np.abs(w) <= limit)
    assert w.std() > 0.3 * limit


def test_dense_module_identity():
    mod = DenseModule(
        weight=ad.Tensor(np.eye(3), requires_grad=True),
        bias=ad.Tensor(np.zeros(3), requires_grad=True),
        activation="linear",
    )
    x = ad.Tensor(np.array([[1.0, -2.0, 3.0]]))
    with ad.Tape():
        y = mod.forward(x)
    assert np.allclose(y.data, x.data)
    assert mod.d_in == 3 and mod.d_out == 3
    assert set(mod.params()) == {"weight", "bias"}


def test_dense_module_relu_and_errors():
    rng = np.random.default_rng(1)
    mod = DenseModule.create(rng, 4, 2, activation="relu")
    x = ad.Tensor(np.ones((5, 4)))
    with ad.Tape():
        y = mod.forward(x)
    assert y.shape == (5, 2)
    assert np.all(y.data >= 0.0)
    with pytest.raises(ShapeError):
        with ad.Tape():
            mod.forward(ad.Tensor(np.ones((5, 3))))
    with pytest.raises(ParameterError):
        DenseModule.create(rng, 4, 2, activation="tanh")


def test_conv_block_shapes():
    rng = np.random.default_rng(2)
    block = ConvBlock.create(rng, 3, 3, 8)
    x = ad.Tensor(np.random.default_rng(0).random((2, 16, 16, 3)))
    with ad.Tape():
        y = block.forward(x)
    assert y.shape == (2, 7, 7, 8)  # valid conv 16->14, pool 14->7
    assert np.all(y.data >= 0.0)


def test_lr_schedule_paper_values():
    assert lr_schedule(0) == pytest.approx(0.001)
    assert lr_schedule(24) == pytest.approx(0.001)
    assert lr_schedule(25) == pytest.approx(1e-4)
    assert lr_schedule(75) == pytest.approx(1e-6)
    values = [lr_schedule(e) for e in range(120)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(ParameterError):
        lr_schedule(-1)


def test_adam_first_step_magnitude():
    # with a constant gradient g, the bias-corrected first step is -lr*sign(g)
    p = ad.Tensor(np.zeros(3), requires_grad=True)
    p.grad = np.array([0.5, -2.0, 1e-3])
    opt = Adam({"p": p})
    opt.step(0.01)
    assert np.allclose(p.data, [-0.01, 0.01, -0.01], atol=1e-6)


def test_adam_converges_on_quadratic():
    p = ad.Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam({"p": p})
    for _ in range(2000):
        p.zero_grad()
        p.grad += 2.0 * p.data
        opt.step(0.05)
    assert np.allclose(p.data, 0.0, atol=1e-3)


def test_adam_requires_gradients():
    p = ad.Tensor(np.zeros(2), requires_grad=True)
    p.grad = None
    with pytest.raises(ContractError):
        Adam({"p": p}).step(0.01)
    with pytest.raises(ParameterError):
        Adam({"p": ad.Tensor(np.zeros(2), requires_grad=True)}).step(-1.0)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    params = {
        "a.weight": ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b.bias": ad.Tensor(rng.normal(size=7), requires_grad=True),
        "c.kernels": ad.Tensor(rng.normal(size=(2, 2, 3, 5)), requires_grad=True),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    with open(path, "rb") as fh:
        assert fh.readline().decode().strip() == CHECKPOINT_MAGIC
    state = load_checkpoint(path)
    assert set(state) == set(params)
    for name, p in params.items():
        assert np.array_equal(state[name], p.data)


def test_checkpoint_corrupt_errors(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not-a-checkpoint\nend\n")
    with pytest.raises(ParseError):
        load_checkpoint(path)
    path.write_bytes(b"garbage with no terminator")
    with pytest.raises(ParseError):
        load_checkpoint(path)
    path.write_bytes(CHECKPOINT_MAGIC.encode() + b"\nname bad-shape 0\nend\n")
    with pytest.raises(ParseError):
        load_checkpoint(path)
