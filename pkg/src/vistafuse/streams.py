"""The two feature extractors: visual (augment + CNN + dense head) and
tactile (flatten + layer norm + dense trunk).  Both emit batch × feature_dim."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError
from .layers import ConvBlock, DenseModule

WINDOW = 50
TACTILE_CHANNELS = 6


@dataclass
class AugmentConfig:
    flip_prob: float = 0.5
    rotation_max_deg: float = 10.0
    contrast_range: tuple = (0.8, 1.2)
    translate_max_px: float = 8.0
    zoom_range: tuple = (0.9, 1.1)
    crop_size: int = 64


def _affine_sample(img, matrix, offset, out_h, out_w):
    """Inverse-map bilinear sampling with edge clamping.

    Output pixel (r, c) reads source coordinates matrix @ (r, c) + offset.
    """
    rr, cc = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    coords = np.stack([rr.ravel(), cc.ravel()])
    src = matrix @ coords + offset[:, None]
    sr = np.clip(src[0], 0, img.shape[0] - 1)
    sc = np.clip(src[1], 0, img.shape[1] - 1)
    r0 = np.floor(sr).astype(int)
    c0 = np.floor(sc).astype(int)
    r1 = np.minimum(r0 + 1, img.shape[0] - 1)
    c1 = np.minimum(c0 + 1, img.shape[1] - 1)
    fr = (sr - r0)[:, None]
    fc = (sc - c0)[:, None]
    flat = img.reshape(-1, img.shape[2])
    w = img.shape[1]
    top = flat[r0 * w + c0] * (1 - fc) + flat[r0 * w + c1] * fc
    bot = flat[r1 * w + c0] * (1 - fc) + flat[r1 * w + c1] * fc
    out = top * (1 - fr) + bot * fr
    return out.reshape(out_h, out_w, img.shape[2])


def augment_image(img, cfg, training, rng):
    """Random flip/rotate/zoom/translate/contrast then random crop (training),
    or a plain center crop (inference).  Returns float pixels in [0, 1]."""
    pixels = np.asarray(img, dtype=np.float64) / 255.0
    h, w = pixels.shape[:2]
    c = cfg.crop_size
    if c > min(h, w):
        raise ParameterError(f"crop {c} larger than image {h}x{w}")
    if not training:
        r0, c0 = (h - c) // 2, (w - c) // 2
        return pixels[r0 : r0 + c, c0 : c0 + c]

    if cfg.flip_prob > 0 and rng.random() < cfg.flip_prob:
        pixels = pixels[:, ::-1]
    angle = np.deg2rad(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
    zoom = rng.uniform(*cfg.zoom_range)
    tr = rng.uniform(-cfg.translate_max_px, cfg.translate_max_px)
    tc = rng.uniform(-cfg.translate_max_px, cfg.translate_max_px)
    if angle != 0.0 or zoom != 1.0 or tr != 0.0 or tc != 0.0:
        # rotate+scale about the image center, then translate
        cos_a, sin_a = np.cos(angle) / zoom, np.sin(angle) / zoom
        matrix = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        offset = center - matrix @ center + np.array([tr, tc])
        pixels = _affine_sample(pixels, matrix, offset, h, w)
    lo, hi = cfg.contrast_range
    if (lo, hi) != (1.0, 1.0):
        factor = rng.uniform(lo, hi)
        mean = pixels.mean()
        pixels = np.clip(mean + factor * (pixels - mean), 0.0, 1.0)
    r0 = int(rng.integers(0, h - c + 1))
    c0 = int(rng.integers(0, w - c + 1))
    return pixels[r0 : r0 + c, c0 : c0 + c]


@dataclass
class VisualStream:
    augment: AugmentConfig
    encoder: list  # ConvBlocks
    head: list  # DenseModules ending at feature_dim

    @classmethod
    def create(cls, rng, crop_size=64, conv_channels=(8, 16, 32), head_widths=(128, 64), dropout=0.2):
        encoder = []
        c_in = 3
        side = crop_size
        for c_out in conv_channels:
            encoder.append(ConvBlock.create(rng, 3, c_in, c_out))
            side = (side - 2) // 2
            c_in = c_out
        flat = side * side * c_in
        head = []
        d_in = flat
        for i, d_out in enumerate(head_widths):
            head.append(DenseModule.create(rng, d_in, d_out, activation="relu", dropout_rate=dropout))
            d_in = d_out
        return cls(augment=AugmentConfig(crop_size=crop_size), encoder=encoder, head=head)

    @property
    def feature_dim(self):
        return self.head[-1].d_out

    def forward(self, images, training=False, rng=None):
        """images: Tensor b×crop×crop×3, already augmented and in [0, 1]."""
        x = images if isinstance(images, ad.Tensor) else ad.Tensor(images)
        for block in self.encoder:
            x = block.forward(x)
        b = x.shape[0]
        x = ad.reshape(x, (b, -1))
        for dense in self.head:
            x = dense.forward(x, training=training, rng=rng)
        return x

    def params(self):
        out = {}
        for i, block in enumerate(self.encoder):
            for k, p in block.params().items():
                out[f"visual.conv{i}.{k}"] = p
        for i, dense in enumerate(self.head):
            for k, p in dense.params().items():
                out[f"visual.dense{i}.{k}"] = p
        return out


@dataclass
class TactileStream:
    norm_gain: ad.Tensor
    norm_bias: ad.Tensor
    trunk: list  # DenseModules ending at feature_dim

    @classmethod
    def create(cls, rng, window=WINDOW, channels=TACTILE_CHANNELS, widths=(128, 64), dropout=0.2):
        flat = window * channels
        trunk = []
        d_in = flat
        for d_out in widths:
            trunk.append(DenseModule.create(rng, d_in, d_out, activation="relu", dropout_rate=dropout))
            d_in = d_out
        return cls(
            norm_gain=ad.Tensor(np.ones(flat), requires_grad=True),
            norm_bias=ad.Tensor(np.zeros(flat), requires_grad=True),
            trunk=trunk,
        )

    @property
    def feature_dim(self):
        return self.trunk[-1].d_out

    @property
    def flat_dim(self):
        return self.norm_gain.shape[0]

    def forward(self, windows, training=False, rng=None):
        """windows: Tensor b×W×D."""
        x = windows if isinstance(windows, ad.Tensor) else ad.Tensor(windows)
        if x.ndim != 3 or x.shape[1] * x.shape[2] != self.flat_dim:
            raise ShapeError(
                f"tactile input must be b x W x D with W*D = {self.flat_dim}, got {x.shape}"
            )
        b = x.shape[0]
        x = ad.reshape(x, (b, -1))
        x = ad.layer_norm(x, self.norm_gain, self.norm_bias)
        for dense in self.trunk:
            x = dense.forward(x, training=training, rng=rng)
        return x

    def params(self):
        out = {"tactile.norm.gain": self.norm_gain, "tactile.norm.bias": self.norm_bias}
        for i, dense in enumerate(self.trunk):
            for k, p in dense.params().items():
                out[f"tactile.dense{i}.{k}"] = p
        return out
