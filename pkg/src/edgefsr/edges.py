"""Canny and Difference-of-Gaussians edge maps, written out from first principles.

All detectors are batched over (B, C, H, W) tensors, run in float64 and are
non-differentiable: callers get plain tensors with no autograd history.
"""

from __future__ import annotations

import math
from typing import Union

import torch
import torch.nn.functional as F

from .core import (
    CannyParams,
    DoGParams,
    EdgePriorMap,
    ImageTensor,
    luminance,
    to_display,
)
from .errors import ParameterError, ValidationError

__all__ = [
    "CannyParams",
    "DoGParams",
    "gaussian_kernel1d",
    "gaussian_blur",
    "sobel",
    "canny",
    "canny_stages",
    "dog",
    "dog_response",
    "extract_prior",
]

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=torch.float64)

# (minus, plus) neighbour offsets along the quantized gradient direction.
# Rows grow downward, so a 45 degree gradient points to the lower right.
_NMS_OFFSETS = (
    ((0, -1), (0, 1)),  # 0 deg
    ((-1, -1), (1, 1)),  # 45 deg
    ((-1, 0), (1, 0)),  # 90 deg
    ((-1, 1), (1, -1)),  # 135 deg
)

TensorLike = Union[torch.Tensor, ImageTensor]


def _unwrap(img: TensorLike) -> torch.Tensor:
    x = img.data if isinstance(img, ImageTensor) else torch.as_tensor(img)
    if x.ndim != 4:
        raise ValidationError(f"expected (batch, channel, height, width), got shape {tuple(x.shape)}")
    return x


def _reflect_index(n: int, r: int) -> torch.Tensor:
    # half-sample symmetric extension (edge pixel repeated): ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    idx = torch.arange(-r, n + r) % (2 * n)
    return torch.where(idx >= n, 2 * n - 1 - idx, idx)


def _pad_reflect(x: torch.Tensor, r: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    x = x.index_select(-1, _reflect_index(w, r).to(x.device))
    return x.index_select(-2, _reflect_index(h, r).to(x.device))


def gaussian_kernel1d(sigma: float, dtype=torch.float64) -> torch.Tensor:
    """Normalized sampled Gaussian with radius ceil(3 sigma)."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    r = int(math.ceil(3.0 * sigma))
    x = torch.arange(-r, r + 1, dtype=torch.float64)
    k = torch.exp(-(x**2) / (2.0 * sigma**2))
    return (k / k.sum()).to(dtype)


def _blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    k = gaussian_kernel1d(sigma, x.dtype).to(x.device)
    r = (k.numel() - 1) // 2
    c = x.shape[1]
    xp = _pad_reflect(x, r)
    xp = F.conv2d(xp, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(xp, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def gaussian_blur(img: TensorLike, sigma: float):
    """Separable Gaussian blur with symmetric border extension.

    Returns the same type it was given (tensor or ImageTensor).
    """
    x = _unwrap(img)
    out = _blur(x if x.is_floating_point() else x.double(), sigma)
    if isinstance(img, ImageTensor):
        return ImageTensor(out, img.value_range)
    return out


def _single_channel(x: torch.Tensor, to_gray: bool) -> torch.Tensor:
    if x.shape[1] == 1:
        return x
    if x.shape[1] == 3 and to_gray:
        return luminance(x)
    raise ValidationError(
        f"edge detectors need a single-channel image, got {x.shape[1]} channels"
        + ("" if to_gray else " (pass to_gray=True to convert RGB)")
    )


def sobel(x: torch.Tensor):
    """Sobel derivatives (gx to the right, gy downward) with edge replication."""
    kx = _SOBEL_X.to(x.dtype).to(x.device).view(1, 1, 3, 3)
    ky = kx.transpose(-1, -2)
    xp = _pad_reflect(x, 1)
    return F.conv2d(xp, kx), F.conv2d(xp, ky)


def _shift(padded: torch.Tensor, dy: int, dx: int, h: int, w: int) -> torch.Tensor:
    return padded[..., 1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]


def canny_stages(img: TensorLike, params: CannyParams = CannyParams(), to_gray: bool = False) -> dict:
    """Run the Canny pipeline and return every intermediate stage.

    Keys: ``smooth``, ``gx``, ``gy``, ``magnitude``, ``direction`` (bin index
    0..3 for 0/45/90/135 degrees), ``nms`` (suppressed magnitude), ``strong``,
    ``weak`` and ``edges`` (bool).
    """
    x = _single_channel(_unwrap(img), to_gray).detach().double()
    h, w = x.shape[-2:]
    smooth = _blur(x, params.sigma)
    gx, gy = sobel(smooth)
    mag = torch.sqrt(gx * gx + gy * gy)

    angle = torch.rad2deg(torch.atan2(gy, gx)) % 180.0
    direction = torch.floor((angle + 22.5) / 45.0).long() % 4

    peak = mag.amax(dim=(1, 2, 3), keepdim=True)
    # ties between the two pixels straddling a symmetric step are broken
    # toward the "plus" side so the edge stays one pixel wide
    tol = 1e-9 * peak
    padded = F.pad(mag, (1, 1, 1, 1))
    keep = torch.zeros_like(mag, dtype=torch.bool)
    for b, ((my, mx), (py, px)) in enumerate(_NMS_OFFSETS):
        minus = _shift(padded, my, mx, h, w)
        plus = _shift(padded, py, px, h, w)
        keep |= (direction == b) & (mag + tol >= minus) & (mag > plus + tol)
    nms = torch.where(keep & (mag > tol), mag, torch.zeros_like(mag))

    if params.relative:
        high, low = params.high * peak, params.low * peak
    else:
        high = torch.full_like(peak, params.high)
        low = torch.full_like(peak, params.low)
    candidate = nms > 0
    strong = candidate & (nms >= high)
    weak = candidate & (nms >= low)

    edges = strong
    while True:
        grown = (F.max_pool2d(edges.double(), 3, stride=1, padding=1) > 0) & weak
        if torch.equal(grown, edges):
            break
        edges = grown

    return dict(
        smooth=smooth, gx=gx, gy=gy, magnitude=mag, direction=direction,
        nms=nms, strong=strong, weak=weak, edges=edges,
    )


def canny(img: TensorLike, params: CannyParams = CannyParams(), to_gray: bool = False,
          source_iteration: int = 0) -> EdgePriorMap:
    """Binary Canny edge map of a single-channel (or, with ``to_gray``, RGB) image."""
    x = _unwrap(img)
    edges = canny_stages(x, params, to_gray)["edges"]
    dtype = x.dtype if x.is_floating_point() else torch.float32
    return EdgePriorMap(edges.to(dtype), "canny", source_iteration)


def dog_response(img: TensorLike, params: DoGParams = DoGParams(), to_gray: bool = False) -> torch.Tensor:
    """blur(x, sigma1) - blur(x, sigma2), without any normalization."""
    x = _single_channel(_unwrap(img), to_gray).detach().double()
    return _blur(x, params.sigma1) - _blur(x, params.sigma2)


def dog(img: TensorLike, params: DoGParams = DoGParams(), to_gray: bool = False,
        source_iteration: int = 0) -> EdgePriorMap:
    """Zero-mean (per image) Difference-of-Gaussians detail map."""
    x = _unwrap(img)
    r = dog_response(x, params, to_gray)
    r = r - r.mean(dim=(1, 2, 3), keepdim=True)
    dtype = x.dtype if x.is_floating_point() else torch.float32
    return EdgePriorMap(r.to(dtype), "dog", source_iteration)


@torch.no_grad()
def extract_prior(sr: torch.Tensor, kind: str, canny_params: CannyParams, dog_params: DoGParams,
                  source_iteration: int) -> EdgePriorMap:
    """Edge map of an internal-range RGB SR output, computed on its display-range luminance."""
    gray = luminance(to_display(sr.detach()))
    if kind == "canny":
        return canny(gray, canny_params, source_iteration=source_iteration)
    if kind == "dog":
        return dog(gray, dog_params, source_iteration=source_iteration)
    raise ParameterError(f"unknown edge prior kind {kind!r}")
