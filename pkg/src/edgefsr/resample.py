"""Fixed (non-learned) resampling used around the networks."""

import torch
import torch.nn.functional as F

from .errors import ParameterError, ValidationError


def bilinear_upsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsampling by an integer factor, half-pixel (align_corners=False) convention."""
    if factor < 1 or int(factor) != factor:
        raise ParameterError(f"upsampling factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    return F.interpolate(x, size=(h * factor, w * factor), mode="bilinear", align_corners=False)


def bicubic_downsample(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Antialiased bicubic downsampling (Keys kernel, a = -0.5, support scaled by ``factor``).

    Border taps that fall outside the image are dropped and the remaining
    weights renormalized.
    """
    if factor < 1 or int(factor) != factor:
        raise ParameterError(f"downsampling factor must be an integer >= 1, got {factor}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValidationError(f"image size {h}x{w} is not divisible by {factor}")
    if factor == 1:
        return x
    return F.interpolate(x, size=(h // factor, w // factor), mode="bicubic",
                         align_corners=False, antialias=True)
