"""Generators (DeNet/DSNet, TNet/SNet) and LightCNN-style discriminators."""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import CannyParams, DoGParams, EdgePriorMap, RunConfig, SRNetState
from .edges import extract_prior
from .errors import ConfigError, ValidationError
from .resample import bilinear_upsample


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class DegradationNet(nn.Module):
    """HR -> LR generator: head conv, residual body, stride-2 convs, tail conv.

    Used for both DeNet (HR to pseudo-real LR) and DSNet (SR back to LR).
    """

    def __init__(self, scale=4, channels=64, n_blocks=16, in_channels=3, out_channels=3):
        super().__init__()
        n_down = int(math.log2(scale))
        if 2**n_down != scale:
            raise ConfigError(f"scale must be a power of 2, got {scale}")
        self.scale = scale
        self.head = nn.Conv2d(in_channels, channels, 3, 1, 1)
        self.body = nn.Sequential(*[ResidualBlock(channels) for _ in range(n_blocks)])
        down = []
        for _ in range(n_down):
            down += [nn.Conv2d(channels, channels, 3, 2, 1), nn.ReLU(inplace=True)]
        self.down = nn.Sequential(*down)
        self.tail = nn.Conv2d(channels, out_channels, 3, 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.scale or w % self.scale:
            raise ValidationError(f"input size {h}x{w} is not divisible by scale {self.scale}")
        return self.tail(self.down(self.body(self.head(x))))


def _projection_geometry(stride):
    # output size is exactly in*stride (deconv) and in/stride (conv)
    if stride == 1:
        return 3, 1
    return stride + 4, 2


class FeedbackBlock(nn.Module):
    """Iterative up/down projection groups with dense skip connections.

    The input compression conv of the original feedback block is left out:
    the PERB fusion convs in front of it already produce ``channels`` maps.
    """

    def __init__(self, channels, groups=3, stride=2):
        super().__init__()
        k, p = _projection_geometry(stride)
        c = channels
        self.groups = groups
        self.up = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(c, c, k, stride, p), nn.PReLU(c)) for _ in range(groups)
        )
        self.down = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c, c, k, stride, p), nn.PReLU(c)) for _ in range(groups)
        )
        self.up_tran = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c * (i + 1), c, 1), nn.PReLU(c)) for i in range(1, groups)
        )
        self.down_tran = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c * (i + 1), c, 1), nn.PReLU(c)) for i in range(1, groups)
        )
        self.compress_out = nn.Sequential(nn.Conv2d(c * groups, c, 1), nn.PReLU(c))

    def forward(self, x):
        low = [x]
        high = []
        for i in range(self.groups):
            l = torch.cat(low, 1)
            if i > 0:
                l = self.up_tran[i - 1](l)
            high.append(self.up[i](l))
            h = torch.cat(high, 1)
            if i > 0:
                h = self.down_tran[i - 1](h)
            low.append(self.down[i](h))
        return self.compress_out(torch.cat(low[1:], 1))


class SRNet(nn.Module):
    """Recurrent SR network unfolded over ``n_iterations`` steps (TNet and SNet).

    Each iteration: shallow features (3x3 conv + pixel shuffle), PERB (1x1 and
    3x3 fusion of shallow, feedback and prior features, then a feedback block)
    and RECB (deconv + 3x3 conv) giving a residual added to the bilinear
    upsampled input. After iteration 1 a Canny map of its output becomes the
    prior of iteration 2; from iteration 2 on, a DoG map of the previous output
    is the prior.

    The 1x1 fusion conv is stored as one conv per concat slot (shallow,
    feedback, prior); their sum is the 1x1 conv of the concatenation, and an
    absent slot contributes exactly zero, so it is skipped.

    ``prior_free=True`` builds the architecture without any prior path. All
    prior-related parameters are created last, so under the same seed a
    prior-free net and a full net share every other weight.
    """

    def __init__(self, scale=4, channels=48, n_iterations=3, groups=3, proj_stride=2,
                 use_canny=True, use_dog=True, canny_params: CannyParams = CannyParams(),
                 dog_params: DoGParams = DoGParams(), prior_free=False):
        super().__init__()
        if n_iterations < 1:
            raise ConfigError(f"n_iterations must be >= 1, got {n_iterations}")
        c = channels
        self.scale = scale
        self.n_iterations = n_iterations
        self.canny_params = canny_params
        self.dog_params = dog_params
        self.prior_free = prior_free
        self.use_canny = use_canny and not prior_free
        self.use_dog = use_dog and not prior_free

        self.sfe = nn.Sequential(nn.Conv2d(3, c * scale * scale, 3, 1, 1), nn.PixelShuffle(scale), nn.PReLU(c))
        self.fuse_sf = nn.Conv2d(c, c, 1)
        self.fuse_fb = nn.Conv2d(c, c, 1, bias=False)
        self.fuse_tail = nn.Sequential(nn.PReLU(c), nn.Conv2d(c, c, 3, 1, 1), nn.PReLU(c))
        self.feedback = FeedbackBlock(c, groups, proj_stride)
        self.recb = nn.Sequential(nn.ConvTranspose2d(c, c, 3, 1, 1), nn.PReLU(c), nn.Conv2d(c, 3, 3, 1, 1))
        nn.init.zeros_(self.recb[-1].weight)
        nn.init.zeros_(self.recb[-1].bias)

        if not prior_free:
            self.fuse_prior = nn.Conv2d(c, c, 1, bias=False)
            self.embed = nn.ModuleDict({
                "canny": nn.Sequential(nn.Conv2d(1, c, 3, 1, 1), nn.PReLU(c)),
                "dog": nn.Sequential(nn.Conv2d(1, c, 3, 1, 1), nn.PReLU(c)),
            })

    @staticmethod
    def prior_kind(t: int) -> str:
        """Kind of edge prior fed into iteration ``t`` (t >= 2)."""
        return "canny" if t == 2 else "dog"

    def prior_enabled(self, kind: str) -> bool:
        return self.use_canny if kind == "canny" else self.use_dog

    def embed_prior(self, prior: EdgePriorMap, size: Tuple[int, int]) -> torch.Tensor:
        m = prior.data.to(self.fuse_sf.weight.dtype)
        if tuple(m.shape[-2:]) != tuple(size):
            m = F.interpolate(m, size=size, mode="bilinear", align_corners=False)
        if prior.kind == "dog":
            # display-range detail map -> roughly unit scale
            m = m / 127.5
        return self.embed[prior.kind](m)

    def run(self, lr: torch.Tensor, priors: Optional[Dict[int, EdgePriorMap]] = None
            ) -> Tuple[List[torch.Tensor], List[SRNetState]]:
        """Full forward pass returning outputs and per-iteration states.

        ``priors`` maps an iteration index to a fixed edge map that replaces the
        one extracted on the fly (used to hold the priors constant, e.g. for
        finite-difference checks).
        """
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ValidationError(f"SR input must be (B, 3, H, W), got {tuple(lr.shape)}")
        base = bilinear_upsample(lr, self.scale)
        f_sf = self.sfe(lr)
        f_fb = None
        prior = None
        outputs, states = [], []
        for t in range(1, self.n_iterations + 1):
            f_prior = self.embed_prior(prior, f_sf.shape[-2:]) if prior is not None else None
            states.append(SRNetState(t, f_sf, f_fb, f_prior, prior))

            fused = self.fuse_sf(f_sf)
            if f_fb is not None:
                fused = fused + self.fuse_fb(f_fb)
            if f_prior is not None:
                fused = fused + self.fuse_prior(f_prior)
            f_fb = self.feedback(self.fuse_tail(fused))
            sr = self.recb(f_fb) + base
            outputs.append(sr)

            prior = None
            if t < self.n_iterations:
                kind = self.prior_kind(t + 1)
                if self.prior_enabled(kind):
                    if priors is not None and (t + 1) in priors:
                        prior = priors[t + 1]
                    else:
                        prior = extract_prior(sr, kind, self.canny_params, self.dog_params, t)
        return outputs, states

    def forward(self, lr, priors=None):
        return self.run(lr, priors)[0]


class MFM(nn.Module):
    """Max-feature-map: a conv with twice the channels, halves combined by max."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        super().__init__()
        self.out_channels = out_channels
        self.conv = nn.Conv2d(in_channels, 2 * out_channels, kernel_size, stride, padding)

    def forward(self, x):
        a, b = torch.split(self.conv(x), self.out_channels, 1)
        return torch.max(a, b)


class Discriminator(nn.Module):
    """LightCNN-style realness classifier for a fixed input size; returns D(x) in (0, 1)."""

    def __init__(self, in_size, channels=32, in_channels=3):
        super().__init__()
        self.in_size = in_size
        n_pool = max(1, int(math.log2(in_size)) - 2)
        c = channels
        layers = [MFM(in_channels, c, 5, 1, 2), nn.MaxPool2d(2, ceil_mode=True)]
        for i in range(1, n_pool):
            c_out = channels * min(2**i, 4)
            layers += [MFM(c, c, 1), MFM(c, c_out, 3, 1, 1), nn.MaxPool2d(2, ceil_mode=True)]
            c = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c, 1)

    def forward(self, x):
        if tuple(x.shape[-2:]) != (self.in_size, self.in_size):
            raise ValidationError(
                f"discriminator expects {self.in_size}x{self.in_size} inputs, got {tuple(x.shape[-2:])}"
            )
        f = self.features(x).mean(dim=(2, 3))
        return torch.sigmoid(self.head(f))


def build_degradation_net(cfg: RunConfig) -> DegradationNet:
    n = cfg.network
    return DegradationNet(cfg.train.scale_factor, n.de_channels, n.de_blocks)


def build_srnet(cfg: RunConfig, prior_free=False) -> SRNet:
    t, n = cfg.train, cfg.network
    return SRNet(t.scale_factor, n.sr_channels, t.n_iterations, n.sr_groups, n.proj_stride,
                 t.use_canny, t.use_dog, t.canny, t.dog, prior_free=prior_free)


def build_discriminator(cfg: RunConfig, domain: str) -> Discriminator:
    size = cfg.data.hr_size if domain == "hr" else cfg.lr_size
    return Discriminator(size, cfg.network.disc_channels)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
