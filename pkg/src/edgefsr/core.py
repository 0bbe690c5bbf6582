"""Shared data model: image carriers, edge maps, recurrent state and configuration.

Tensors are always laid out as (batch, channel, height, width). Images flow
through the networks in the internal range [-1, 1]; PNG I/O and the edge
detectors work in the display range [0, 255].
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Literal, Optional, Tuple

import torch

from .errors import ConfigError, ParameterError, ValidationError

DISPLAY_RANGE = (0.0, 255.0)
INTERNAL_RANGE = (-1.0, 1.0)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ImageTensor:
    """A batch of images with a declared value range."""

    data: torch.Tensor
    value_range: Tuple[float, float] = INTERNAL_RANGE

    def __post_init__(self):
        d = self.data
        if not isinstance(d, torch.Tensor):
            raise ValidationError(f"expected a torch.Tensor, got {type(d).__name__}")
        if d.ndim != 4:
            raise ValidationError(f"expected (batch, channel, height, width), got shape {tuple(d.shape)}")
        if d.shape[2] <= 0 or d.shape[3] <= 0:
            raise ValidationError("height and width must be positive")
        if d.is_floating_point() and not torch.isfinite(d).all():
            raise ValidationError("image contains non-finite values")
        if tuple(self.value_range) not in (DISPLAY_RANGE, INTERNAL_RANGE):
            raise ValidationError(f"unsupported value range {self.value_range}")

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> Tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]


def to_internal(x: torch.Tensor) -> torch.Tensor:
    return x / 127.5 - 1.0


def to_display(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) * 127.5).clamp(0.0, 255.0)


def normalize(img: ImageTensor, dtype: Optional[torch.dtype] = None) -> ImageTensor:
    """Map a display-range image to the internal range with v / 127.5 - 1.

    Floating inputs keep their dtype unless ``dtype`` is given; integer
    inputs become float32.
    """
    if tuple(img.value_range) != DISPLAY_RANGE:
        raise ValidationError(f"normalize expects a display-range image, got {img.value_range}")
    data = img.data
    if dtype is None:
        dtype = data.dtype if data.is_floating_point() else torch.float32
    data = data.to(dtype)
    if data.min() < 0.0 or data.max() > 255.0:
        raise ValidationError("display-range image has values outside [0, 255]")
    return ImageTensor(to_internal(data), INTERNAL_RANGE)


def denormalize(img: ImageTensor) -> ImageTensor:
    """Exact inverse of :func:`normalize`, clamped to [0, 255]."""
    if tuple(img.value_range) != INTERNAL_RANGE:
        raise ValidationError(f"denormalize expects an internal-range image, got {img.value_range}")
    return ImageTensor(to_display(img.data), DISPLAY_RANGE)


def luminance(x: torch.Tensor) -> torch.Tensor:
    """(B, 3, H, W) -> (B, 1, H, W) with ITU-R BT.601 weights."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValidationError(f"luminance needs (B, 3, H, W), got {tuple(x.shape)}")
    r, g, b = LUMA_WEIGHTS
    return r * x[:, 0:1] + g * x[:, 1:2] + b * x[:, 2:3]


@dataclass(frozen=True)
class EdgePriorMap:
    """Single-channel edge map extracted from an intermediate SR output."""

    data: torch.Tensor
    kind: Literal["canny", "dog"]
    source_iteration: int = 0

    def __post_init__(self):
        d = self.data
        if d.ndim != 4 or d.shape[1] != 1:
            raise ValidationError(f"edge map must be (B, 1, H, W), got {tuple(d.shape)}")
        if self.kind == "canny":
            if not ((d == 0) | (d == 1)).all():
                raise ValidationError("canny edge map must be binary")
        elif self.kind == "dog":
            if not torch.isfinite(d).all():
                raise ValidationError("DoG map contains non-finite values")
        else:
            raise ValidationError(f"unknown edge map kind {self.kind!r}")


@dataclass
class SRNetState:
    """Per-iteration bundle of the recurrent SR forward pass."""

    t: int
    f_sf: torch.Tensor
    f_fb: Optional[torch.Tensor] = None
    f_prior: Optional[torch.Tensor] = None
    prior: Optional[EdgePriorMap] = None

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError(f"iteration index starts at 1, got {self.t}")
        if self.t == 1 and (self.f_fb is not None or self.f_prior is not None):
            raise ValidationError("the first iteration carries no feedback state and no prior")


@dataclass(frozen=True)
class CannyParams:
    """Canny settings. With ``relative`` the thresholds are fractions of the
    per-image maximum gradient magnitude, otherwise absolute magnitudes."""

    sigma: float = 1.0
    low: float = 0.1
    high: float = 0.3
    relative: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"canny sigma must be > 0, got {self.sigma}")
        if not 0 <= self.low < self.high:
            raise ParameterError(f"canny thresholds need 0 <= low < high, got ({self.low}, {self.high})")


@dataclass(frozen=True)
class DoGParams:
    sigma1: float = 1.0
    sigma2: float = 1.6

    def __post_init__(self):
        if not 0 < self.sigma1 < self.sigma2:
            raise ParameterError(f"DoG needs 0 < sigma1 < sigma2, got ({self.sigma1}, {self.sigma2})")


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    beta1: float = 0.05
    alpha2: float = 1.0
    beta2: float = 0.001
    alpha3: float = 1.0
    beta3: float = 0.001
    gamma: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0, got {v}")

    def scaled(self, k: float) -> "LossWeights":
        return LossWeights(**{f.name: getattr(self, f.name) * k for f in fields(self)})


@dataclass(frozen=True)
class NetConfig:
    """Widths of the generators and discriminators."""

    sr_channels: int = 48
    sr_groups: int = 3
    proj_stride: int = 2
    de_channels: int = 64
    de_blocks: int = 16
    disc_channels: int = 32

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"network.{f.name} must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    hr_root: str = ""
    lr_root: str = ""
    paired_root: str = ""
    hr_size: int = 64
    flip: bool = True
    with_replacement: bool = False

    def __post_init__(self):
        if self.hr_size < 1:
            raise ConfigError("data.hr_size must be >= 1")


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class TrainConfig:
    scale_factor: int = 4
    n_iterations: int = 3
    stage1_batch: int = 16
    stage2_batch: int = 4
    lr0: float = 1e-4
    lr_half_period_epochs: int = 10
    seed: int = 0
    stage1_epochs: int = 20
    stage2_epochs: int = 50
    # 0 means "run all configured epochs"
    max_steps: int = 0
    checkpoint_every: int = 5
    sample_every: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    use_canny: bool = True
    use_dog: bool = True
    use_cycle: bool = True
    use_teacher_guidance: bool = True
    split_hr_discriminator: bool = False
    denet_checkpoint: str = ""
    canny: CannyParams = field(default_factory=CannyParams)
    dog: DoGParams = field(default_factory=DoGParams)

    def __post_init__(self):
        if self.scale_factor < 2 or not _is_power_of_two(self.scale_factor):
            raise ConfigError(f"scale_factor must be a power of 2 and >= 2, got {self.scale_factor}")
        if self.n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if self.stage1_batch < 1 or self.stage2_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError("lr0 must be > 0")
        if self.lr_half_period_epochs < 1:
            raise ConfigError("lr_half_period_epochs must be >= 1")
        if self.max_steps < 0 or self.checkpoint_every < 1 or self.sample_every < 1:
            raise ConfigError("max_steps must be >= 0; checkpoint_every and sample_every >= 1")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class RunConfig:
    """Everything a config file can set, grouped by section."""

    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    network: NetConfig = field(default_factory=NetConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.data.hr_size % self.train.scale_factor:
            raise ConfigError(
                f"data.hr_size {self.data.hr_size} is not divisible by scale_factor {self.train.scale_factor}"
            )

    @property
    def lr_size(self) -> int:
        return self.data.hr_size // self.train.scale_factor
