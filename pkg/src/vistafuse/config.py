"""Experiment configuration: defaults, INI-style config files, CLI overrides.

The file format is flat ``key = value`` pairs under ``[data] [model] [train]
[run]`` sections.  Unknown keys are rejected so typos fail loudly, and every
run writes its fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, fields

from .errors import ParameterError


def _int_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(int(v) for v in s)
    return tuple(int(v) for v in str(s).split(",") if v != "")


def _bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    # [data] synthetic generation + dataset location
    dataset_dir: str = "data"
    n_specimens: int = 10
    sweeps_per_specimen: int = 2
    images_per_specimen: int = 2
    classes: str = "HVT"
    image_px_len: int = 192
    image_px_wid: int = 96
    noise_level: float = 0.1
    stick_slip_level: float = 0.03
    sweep_noise_level: float = 0.03
    sweep_samples: int = 500
    pitch_jitter: float = 0.08

    # [model]
    feature_dim: int = 64
    crop_size: int = 64
    conv_channels: tuple = (8, 16, 32)
    visual_widths: tuple = (128,)
    tactile_widths: tuple = (512,)
    classifier_width: int = 64
    heads: int = 1
    d_k: int = 64
    learned_values: bool = False
    dropout: float = 0.2

    # [train]
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.001
    lr_decay: float = 0.1
    lr_period: int = 25
    split_ratio: float = 0.8
    seed: int = 0
    window: int = 50
    stride: int = 50

    # [run]
    fusion: str = "attention"
    stream: str = "fused"  # fused | visual | tactile
    out_dir: str = "runs/run"

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["visual_widths"] = list(self.visual_widths)
        d["tactile_widths"] = list(self.tactile_widths)
        return d


_SECTIONS = {
    "data": (
        "dataset_dir n_specimens sweeps_per_specimen images_per_specimen classes "
        "image_px_len image_px_wid noise_level stick_slip_level sweep_noise_level "
        "sweep_samples pitch_jitter"
    ).split(),
    "model": (
        "feature_dim crop_size conv_channels visual_widths tactile_widths "
        "classifier_width heads d_k learned_values dropout"
    ).split(),
    "train": "epochs batch_size base_lr lr_decay lr_period split_ratio seed window stride".split(),
    "run": "fusion stream out_dir".split(),
}

_PARSERS = {}
for f in fields(ExperimentConfig):
    if f.name in ("conv_channels", "visual_widths", "tactile_widths"):
        _PARSERS[f.name] = _int_list
    elif f.type == "bool" or isinstance(f.default, bool):
        _PARSERS[f.name] = _bool
    elif isinstance(f.default, int):
        _PARSERS[f.name] = int
    elif isinstance(f.default, float):
        _PARSERS[f.name] = float
    else:
        _PARSERS[f.name] = str

FIELD_NAMES = tuple(_PARSERS)


def set_field(cfg, name, value):
    if name not in _PARSERS:
        raise ParameterError(f"unknown config key {name!r}")
    try:
        parsed = _PARSERS[name](value)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"bad value for {name!r}: {exc}")
    setattr(cfg, name, parsed)


def load_config(path=None, overrides=None):
    """Build a config from defaults, then a config file, then CLI overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path, encoding="utf-8")
        if not read:
            raise ParameterError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ParameterError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ParameterError(f"{path}: unknown key {key!r} in section [{section}]")
                set_field(cfg, key, value)
    for key, value in (overrides or {}).items():
        set_field(cfg, key, value)
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.fusion not in ("sum", "max", "concat", "attention"):
        raise ParameterError(f"unknown fusion strategy {cfg.fusion!r}")
    if cfg.stream not in ("fused", "visual", "tactile"):
        raise ParameterError(f"unknown stream mode {cfg.stream!r}")
    if not 0.0 < cfg.split_ratio < 1.0:
        raise ParameterError(f"split_ratio must lie in (0, 1), got {cfg.split_ratio}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ParameterError(f"dropout must lie in [0, 1), got {cfg.dropout}")
    if cfg.epochs < 0 or cfg.batch_size < 1:
        raise ParameterError("epochs must be >= 0 and batch_size >= 1")


def save_run_json(path, cfg, extra=None):
    payload = {"config": cfg.to_dict()}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
