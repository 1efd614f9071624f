"""Run configuration: a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored. Every key must name a
:class:`StageConfig` field; unknown keys are rejected so typos never pass
silently. Boxes and ranges are written as comma-separated numbers.
"""
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..losses import RoiBoxes
from ..model import ModelConfig

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@dataclass
class StageConfig:
    stage: str = "dict"                 # "dict" (stage 1) or "restore" (stage 2)
    # model
    image_size: int = 32
    base_channels: int = 8
    channel_cap: int = 32
    z_channels: int = 32
    codebook_size: int = 64
    n_heads: int = 4
    norm_groups: int = 8
    residual: str = "prior"
    # loss weights
    lambda_per: float = 1.0
    lambda_p: float = 0.25
    lambda_disc: float = 1.0
    lambda_style: float = 2000.0
    lambda_adv: float = 0.8
    lambda_id: float = 1.5
    lambda_d: float = 1.0
    lambda_c: float = 0.25
    # optimisation
    lr: float = 7e-5
    disc_lr: float = 0.0                # 0 -> same as lr
    lr_decay_at: float = 0.75           # fraction of iterations
    lr_decay_factor: float = 0.1
    iterations: int = 2000
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    # seeds and data
    seed: int = 0
    data_seed: int = 0
    dataset_size: int = 8
    data_dir: str = ""
    stand_in_seed: int = 1234
    # stage 2
    stage1_checkpoint: str = ""
    train_dictionary: bool = False
    prior_grad: bool = False
    crop_size: int = 16
    sigma_range: tuple = (0.2, 10.0)
    scale_range: tuple = (1.0, 8.0)
    noise_range: tuple = (0.0, 20.0)
    quality_range: tuple = (60.0, 100.0)
    roi_left_eye: tuple = RoiBoxes.left_eye
    roi_right_eye: tuple = RoiBoxes.right_eye
    roi_mouth: tuple = RoiBoxes.mouth
    # logging
    log_every: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage not in ("dict", "restore"):
            raise ValueError(f"stage must be 'dict' or 'restore', got {self.stage!r}")
        if self.image_size % 32:
            raise ValueError(f"image_size {self.image_size} not divisible by 32")
        for k in ("image_size", "base_channels", "channel_cap", "z_channels", "codebook_size",
                  "n_heads", "norm_groups", "iterations", "batch_size", "dataset_size", "crop_size"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.z_channels % self.n_heads:
            raise ValueError(f"z_channels {self.z_channels} not divisible by n_heads {self.n_heads}")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if self.stage == "restore" and not self.stage1_checkpoint:
            raise ValueError("a restore-stage config must reference stage1_checkpoint")

    # -- derived views
    def model_config(self):
        return ModelConfig(image_size=self.image_size, base_channels=self.base_channels,
                           channel_cap=self.channel_cap, z_channels=self.z_channels,
                           codebook_size=self.codebook_size, n_heads=self.n_heads,
                           norm_groups=self.norm_groups, residual=self.residual)

    def boxes(self):
        return RoiBoxes(tuple(self.roi_left_eye), tuple(self.roi_right_eye), tuple(self.roi_mouth))

    def dict_weights(self):
        return {"per": self.lambda_per, "adv": self.lambda_adv, "d": self.lambda_d, "c": self.lambda_c}

    def restore_weights(self):
        return {"per": self.lambda_per, "p": self.lambda_p, "disc": self.lambda_disc,
                "style": self.lambda_style, "adv": self.lambda_adv, "id": self.lambda_id}

    def lr_at(self, iteration, base=None):
        base = self.lr if base is None else base
        if iteration >= int(round(self.lr_decay_at * self.iterations)):
            return base * self.lr_decay_factor
        return base

    @property
    def latent_size(self):
        return self.image_size // 32

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- text form
    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        base = base or cls.__new__(cls)
        types = {f.name: f for f in dataclasses.fields(cls)}
        values = {f.name: getattr(base, f.name, f.default) for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            if key not in types:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            values[key] = _parse(types[key], val, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides):
        cfg = cls.from_text(Path(path).read_text())
        return cfg.replace(**overrides) if overrides else cfg

    def save(self, path):
        Path(path).write_text(self.to_text())


def _parse(f, val, lineno):
    default = f.default
    try:
        if isinstance(default, bool):
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            as_float = float(val)
            if as_float != int(as_float):
                raise ValueError(val)
            return int(as_float)
        if isinstance(default, float):
            return float(val)
        if isinstance(default, tuple):
            parts = tuple(float(x) for x in val.split(","))
            if len(parts) != len(default):
                raise ValueError(val)
            return parts
        return val
    except ValueError:
        raise ValueError(f"line {lineno}: bad value {val!r} for {f.name}") from None


def desk_config(name):
    """Load one of the shipped configs by stem, e.g. ``desk32_dict``."""
    return StageConfig.load(CONFIG_DIR / f"{name}.cfg")
