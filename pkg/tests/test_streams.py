"""Unit tests for the visual and tactile feature streams."""

import numpy as np
import pytest

from vistafuse import autodiff as ad
from vistafuse.errors import ParameterError, ShapeError
from vistafuse.streams import AugmentConfig, TactileStream, VisualStream, augment_image


def _image(h=96, w=80):
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def test_augment_inference_center_crop():
    img = _image()
    out = augment_image(img, AugmentConfig(crop_size=64), training=False, rng=None)
    assert out.shape == (64, 64, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0
    r0, c0 = (96 - 64) // 2, (80 - 64) // 2
    assert np.allclose(out, img[r0 : r0 + 64, c0 : c0 + 64] / 255.0)


def test_augment_training_properties():
    img = _image()
    rng = np.random.default_rng(1)
    outs = [augment_image(img, AugmentConfig(crop_size=64), True, rng) for _ in range(8)]
    for out in outs:
        assert out.shape == (64, 64, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0
    # randomized: crops must not all be identical
    assert any(not np.array_equal(outs[0], o) for o in outs[1:])
    # deterministic given the same rng state
    a = augment_image(img, AugmentConfig(crop_size=64), True, np.random.default_rng(5))
    b = augment_image(img, AugmentConfig(crop_size=64), True, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_augment_crop_too_large():
    with pytest.raises(ParameterError):
        augment_image(_image(32, 32), AugmentConfig(crop_size=64), False, None)


def test_visual_stream_shapes_and_params():
    rng = np.random.default_rng(2)
    stream = VisualStream.create(rng, crop_size=32, conv_channels=(4, 8), head_widths=(16, 8))
    assert stream.feature_dim == 8
    x = np.random.default_rng(0).random((3, 32, 32, 3))
    with ad.Tape():
        f = stream.forward(x)
    assert f.shape == (3, 8)
    names = set(stream.params())
    assert "visual.conv0.kernels" in names
    assert "visual.dense1.weight" in names
    assert all(n.startswith("visual.") for n in names)


def test_tactile_stream_shapes_and_errors():
    rng = np.random.default_rng(3)
    stream = TactileStream.create(rng, widths=(32, 16))
    assert stream.feature_dim == 16
    assert stream.flat_dim == 300
    x = np.random.default_rng(0).normal(size=(4, 50, 6))
    with ad.Tape():
        f = stream.forward(x)
    assert f.shape == (4, 16)
    with pytest.raises(ShapeError):
        with ad.Tape():
            stream.forward(np.zeros((4, 25, 6)))
    names = set(stream.params())
    assert {"tactile.norm.gain", "tactile.norm.bias"} <= names


def test_tactile_stream_scale_invariance():
    # layer norm makes the trunk input invariant to per-window affine scaling
    rng = np.random.default_rng(4)
    stream = TactileStream.create(rng, widths=(32, 16))
    x = np.random.default_rng(0).normal(size=(2, 50, 6))
    with ad.Tape():
        a = stream.forward(x)
    with ad.Tape():
        b = stream.forward(5.0 * x + 3.0)
    assert np.allclose(a.data, b.data, atol=1e-6)


def test_streams_dropout_deterministic_given_rng():
    rng = np.random.default_rng(5)
    stream = TactileStream.create(rng, widths=(32, 16), dropout=0.5)
    x = np.random.default_rng(0).normal(size=(2, 50, 6))
    with ad.Tape():
        a = stream.forward(x, training=True, rng=np.random.default_rng(9))
    with ad.Tape():
        b = stream.forward(x, training=True, rng=np.random.default_rng(9))
    assert np.array_equal(a.data, b.data)
