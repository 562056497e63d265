"""Run configuration: dimensions, loss weights, optimizer, toggles.

Config files are INI-style sections of key = value pairs; unknown sections
or keys are errors so typos fail loudly. Missing keys keep the toy-profile
defaults below.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError


@dataclass
class RunConfig:
    # dims
    h: int = 96
    w: int = 96
    c: int = 3
    G: int = 8
    d_lm: int = 64
    d: int = 32
    C: int = 16
    H: int = 24
    W: int = 24
    L_vl: int = 96
    L_sam: int = 96
    conv_strides: tuple[int, int, int] = (2, 2, 1)
    vis_strides: tuple[int, int] = (2, 2)
    # bank
    N_bank: int = 8
    T_anchors: int = 1
    # loss
    lambda_bce: float = 2.0
    lambda_dice: float = 4.0
    lambda_mask: float = 1.0
    lambda_tmcc: float = 1.0
    lambda_txt: float = 0.0
    gauss_sigma: float = 7.0
    gauss_ksize: int = 31
    # optim
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.0
    warmup_steps: int = 100
    clip_norm: float = 1.0
    # train
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    n_samples: int = 640
    null_fraction: float = 0.1
    eval_interval: int = 500
    train_fraction: float = 0.8
    # ablation
    use_prior: bool = True
    use_tmcc: bool = True
    use_contextual: bool = True
    use_t2m: bool = True
    use_m2t: bool = True

    @property
    def N(self) -> int:
        return self.G * self.G

    @property
    def K(self) -> int:
        return self.N_bank - 1

    def validate(self):
        for name in ("h", "w", "c", "G", "d_lm", "d", "C", "H", "W",
                     "L_vl", "L_sam", "N_bank", "T_anchors", "steps",
                     "batch_size", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.h % self.G or self.w % self.G:
            raise ConfigError(f"image {self.h}x{self.w} not divisible by grid {self.G}")
        s1, s2, s3 = self.conv_strides
        if s1 * s2 * s3 * self.H != self.L_sam or self.H != self.W:
            raise ConfigError(
                f"conv strides {self.conv_strides} do not map {self.L_sam} -> {self.H}")
        v1, v2 = self.vis_strides
        if v1 * v2 * self.H != self.h or v1 * v2 * self.W != self.w:
            raise ConfigError(
                f"visual strides {self.vis_strides} do not map {self.h}x{self.w} "
                f"-> {self.H}x{self.W}")
        if self.C % 4:
            raise ConfigError(f"C must be divisible by 4 for pixel codes, got {self.C}")
        if self.d_lm % 4 or self.d % 2:
            raise ConfigError("d_lm must be divisible by 4 and d by 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        return self


_SECTIONS = {
    "dims": ["h", "w", "c", "G", "d_lm", "d", "C", "H", "W", "L_vl", "L_sam",
             "conv_strides", "vis_strides"],
    "bank": ["N_bank", "T_anchors"],
    "loss": ["lambda_bce", "lambda_dice", "lambda_mask", "lambda_tmcc",
             "lambda_txt", "gauss_sigma", "gauss_ksize"],
    "optim": ["lr", "beta1", "beta2", "weight_decay", "warmup_steps", "clip_norm"],
    "train": ["steps", "batch_size", "seed", "n_samples", "null_fraction",
              "eval_interval", "train_fraction"],
    "ablation": ["use_prior", "use_tmcc", "use_contextual", "use_t2m", "use_m2t"],
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    if ftype == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    # stride tuples: comma separated ints
    parts = tuple(int(p) for p in raw.split(","))
    return parts


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive (N_bank, L_vl, ...)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return replace(RunConfig(), **values).validate()


def save_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, names in _SECTIONS.items():
        parser[section] = {}
        for name in names:
            v = getattr(cfg, name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            parser[section][name] = str(v)
    with open(path, "w") as f:
        parser.write(f)


def paper_shape_dims() -> dict:
    """The full-scale shape profile (shape tests only, never trained)."""
    return dict(h=480, w=640, G=24, L_vl=336, L_sam=256, C=256, H=64, W=64)


def tiny_config() -> RunConfig:
    """Miniature profile for finite-difference checks (float64-friendly)."""
    return RunConfig(h=16, w=16, c=3, G=4, d_lm=8, d=6, C=4, H=4, W=4,
                     L_vl=16, L_sam=8, conv_strides=(2, 1, 1), vis_strides=(2, 2),
                     N_bank=3, n_samples=8, steps=4, batch_size=2,
                     gauss_ksize=5, eval_interval=2).validate()
