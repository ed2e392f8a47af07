"""Network layers, the Adam optimizer, the step-decay schedule and checkpoints."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ParameterError, ParseError, ShapeError

CHECKPOINT_MAGIC = "vistafuse-ckpt-1"


def he_uniform(rng, fan_in, shape):
    """Fan-in scaled uniform init."""
    limit = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class DenseModule:
    """Fully connected layer + activation + inverted dropout."""

    weight: ad.Tensor
    bias: ad.Tensor
    activation: str = "relu"
    dropout_rate: float = 0.0

    @classmethod
    def create(cls, rng, d_in, d_out, activation="relu", dropout_rate=0.0):
        if activation not in ("relu", "linear"):
            raise ParameterError(f"unknown activation {activation!r}")
        return cls(
            weight=ad.Tensor(he_uniform(rng, d_in, (d_in, d_out)), requires_grad=True),
            bias=ad.Tensor(np.zeros(d_out), requires_grad=True),
            activation=activation,
            dropout_rate=dropout_rate,
        )

    @property
    def d_in(self):
        return self.weight.shape[0]

    @property
    def d_out(self):
        return self.weight.shape[1]

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"dense expects width {self.d_in}, got input shape {x.shape}")
        out = ad.add(ad.matmul(x, self.weight), self.bias)
        if self.activation == "relu":
            out = ad.relu(out)
        if self.dropout_rate > 0.0:
            out = ad.dropout(out, self.dropout_rate, training, rng)
        return out

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class ConvBlock:
    """Valid conv + bias + relu, optionally followed by a 2×2 max-pool."""

    kernels: ad.Tensor
    bias: ad.Tensor
    stride: int = 1
    pool: bool = True

    @classmethod
    def create(cls, rng, k, c_in, c_out, stride=1, pool=True):
        fan_in = k * k * c_in
        return cls(
            kernels=ad.Tensor(he_uniform(rng, fan_in, (k, k, c_in, c_out)), requires_grad=True),
            bias=ad.Tensor(np.zeros(c_out), requires_grad=True),
            stride=stride,
            pool=pool,
        )

    def forward(self, img):
        out = ad.relu(ad.conv2d(img, self.kernels, self.bias, stride=self.stride))
        if self.pool:
            out = ad.maxpool2x2(out)
        return out

    def params(self):
        return {"kernels": self.kernels, "bias": self.bias}


def lr_schedule(epoch, base_lr=0.001, decay=0.1, period=25):
    """Step decay: multiply by ``decay`` once per completed ``period`` epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be non-negative, got {epoch}")
    return base_lr * decay ** (epoch // period)


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr):
        if lr < 0:
            raise ParameterError(f"learning rate must be non-negative, got {lr}")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient buffer")
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


cross_entropy = ad.cross_entropy


# ---------------------------------------------------------------------------
# checkpoint container: text header + raw little-endian float64 payload

_HEADER_LINE = re.compile(r"^(\S+) ([0-9,]*) (\d+)$")


def save_checkpoint(path, params):
    """Write named tensors as a header (name, shape, byte offset) plus payload."""
    lines = [CHECKPOINT_MAGIC]
    offset = 0
    payload = []
    for name, p in params.items():
        data = np.ascontiguousarray(p.data, dtype="<f8")
        shape = ",".join(str(d) for d in data.shape)
        lines.append(f"{name} {shape} {offset}")
        payload.append(data.tobytes())
        offset += data.nbytes
    header = ("\n".join(lines) + "\nend\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path):
    """Read a checkpoint into a dict of name -> float64 ndarray."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        end = raw.index(b"\nend\n")
    except ValueError:
        raise ParseError(f"{path}: missing header terminator 'end'")
    header = raw[:end].decode("utf-8").splitlines()
    payload = raw[end + len(b"\nend\n") :]
    if not header or header[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic {header[0] if header else '<empty>'!r}")
    out = {}
    for lineno, line in enumerate(header[1:], start=2):
        m = _HEADER_LINE.match(line)
        if not m:
            raise ParseError(f"{path}: malformed header at line {lineno}: {line!r}")
        name, shape_s, offset_s = m.groups()
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        count = int(np.prod(shape)) if shape else 1
        offset = int(offset_s)
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
