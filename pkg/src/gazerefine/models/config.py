"""Hyperparameter records for both networks.

Defaults follow the published training recipe (Adam, batch sizes, learning
rates and decay schedules); widths are desk scale.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

EYENET_VARIANTS = ("none", "rnn", "lstm", "gru")
REFINENET_CELLS = ("none", "rnn", "lstm", "gru")
INITIAL_SOURCES = ("corrupted", "eyenet")


def _check_positive(cfg, names):
    for name in names:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            if not value or any(v <= 0 for v in value):
                raise ValueError(f"{name} entries must be positive, got {value}")
        elif value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")


class _Config:
    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            default = getattr(cls, key, None)
            if isinstance(default, tuple) and not isinstance(value, tuple):
                value = tuple(int(v) for v in value)
            kwargs[key] = value
        return cls(**kwargs)


@dataclass(frozen=True)
class EyeNetConfig(_Config):
    image_size: int = 64
    variant: str = "none"
    channels: tuple = (8, 16, 32, 32)
    hidden: int = 64
    batch_size: int = 16
    epochs: int = 8
    lr: float = 0.016
    decay_factor: float = 0.5
    decay_interval: float = 1.0
    weight_decay: float = 0.005
    gamma_gaze: float = 1.0
    gamma_pupil: float = 1.0
    clip_norm: float = 0.0
    warmup_epochs: float = 0.0     # linear lr ramp; 0 disables

    def __post_init__(self):
        if self.variant not in EYENET_VARIANTS:
            raise ValueError(f"variant must be one of {EYENET_VARIANTS}, got {self.variant!r}")
        _check_positive(self, ("image_size", "channels", "hidden", "batch_size", "epochs", "lr",
                               "decay_factor", "decay_interval"))
        if self.image_size % 16:
            raise ValueError("image_size must be a multiple of 16")
        if len(self.channels) != 4:
            raise ValueError("channels must list four encoder widths")


@dataclass(frozen=True)
class RefineNetConfig(_Config):
    grid_w: int = 128
    grid_h: int = 72
    screen_channels: int = 1
    cell: str = "gru"
    skip_connections: bool = True
    screen_input: bool = True
    channels: tuple = (8, 16, 16)
    hidden: int = 16
    heatmap_sigma: float = 4.0
    kappa_sigma_deg: float = 3.0
    batch_size: int = 8
    epochs: int = 4
    lr: float = 0.008
    decay_factor: float = 0.5
    decay_interval: float = 0.5
    weight_decay: float = 0.0
    gamma_pog: float = 0.001
    gamma_xe: float = 1.0
    clip_norm: float = 0.0
    initial_source: str = "corrupted"
    keep_best_val: bool = True     # restore the epoch with the lowest validation error

    def __post_init__(self):
        if self.cell not in REFINENET_CELLS:
            raise ValueError(f"cell must be one of {REFINENET_CELLS}, got {self.cell!r}")
        if self.initial_source not in INITIAL_SOURCES:
            raise ValueError(f"initial_source must be one of {INITIAL_SOURCES}")
        _check_positive(self, ("grid_w", "grid_h", "screen_channels", "channels", "hidden",
                               "heatmap_sigma", "batch_size", "epochs", "lr", "decay_factor",
                               "decay_interval"))
        if self.grid_w % 8 or self.grid_h % 8:
            raise ValueError("grid dimensions must be multiples of 8")
        if len(self.channels) != 3:
            raise ValueError("channels must list three encoder widths")
        if min(self.kappa_sigma_deg, self.weight_decay, self.gamma_pog, self.gamma_xe) < 0:
            raise ValueError("sigma, decay and loss weights must be non-negative")
