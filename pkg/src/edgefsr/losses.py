"""Content, adversarial, reconstruction and cycle losses and their weighted totals."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import torch

from .core import LossWeights
from .errors import ValidationError

EPS = 1e-7


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValidationError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def clamp_scores(scores: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    return scores.clamp(eps, 1.0 - eps)


def count_clamped(scores: torch.Tensor, eps: float = EPS) -> int:
    """Number of scores outside [eps, 1 - eps] that the adversarial losses clamp."""
    s = scores.detach()
    return int(((s < eps) | (s > 1.0 - eps)).sum())


def content_loss(gen: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Mean absolute error."""
    _same_shape(gen, ref, "content_loss")
    return (gen - ref).abs().mean()


def adversarial_loss_d(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Discriminator loss -E[log D(real)] - E[log(1 - D(fake))]."""
    d_real, d_fake = clamp_scores(d_real), clamp_scores(d_fake)
    return -torch.log(d_real).mean() - torch.log(1.0 - d_fake).mean()


def adversarial_loss_g(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss -E[log D(fake)]."""
    return -torch.log(clamp_scores(d_fake)).mean()


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "mse")
    return ((a - b) ** 2).mean()


def recon_loss_multi(sr_list: Sequence[torch.Tensor], target: torch.Tensor) -> torch.Tensor:
    """Mean over iterations of the per-iteration MSE against ``target``."""
    if len(sr_list) == 0:
        raise ValidationError("recon_loss_multi needs at least one SR output")
    return sum(mse(target, sr) for sr in sr_list) / len(sr_list)


def cycle_loss(lr_real: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    _same_shape(lr_real, reconstructed, "cycle_loss")
    return mse(lr_real, reconstructed)


def total_denet_loss(content, adv_g, w: LossWeights):
    return w.alpha1 * content + w.beta1 * adv_g


def total_tnet_loss(rec, adv_g, w: LossWeights):
    return w.alpha2 * rec + w.beta2 * adv_g


def total_snet_loss(rec, adv_g, cycle, w: LossWeights, use_cycle: bool = True):
    total = w.alpha3 * rec + w.beta3 * adv_g
    if use_cycle:
        total = total + w.gamma * cycle
    return total


@dataclass
class LossReport:
    """Scalar summary of one generator update.

    ``components`` holds the unweighted terms, ``weights`` the factor each one
    enters ``total`` with; ``adv_d`` is the discriminator loss of the same step.
    """

    net: str
    components: Dict[str, float]
    weights: Dict[str, float]
    total: float
    adv_d: float = 0.0
    clamp_events: int = 0

    def weighted_sum(self) -> float:
        return sum(self.weights[k] * v for k, v in self.components.items())

    def as_dict(self) -> dict:
        return asdict(self)


def scalar(v) -> float:
    return v.detach().item() if isinstance(v, torch.Tensor) else float(v)


def make_report(net: str, components: Dict[str, torch.Tensor], weights: Dict[str, float],
                total: torch.Tensor, adv_d: Optional[torch.Tensor] = None, clamp_events: int = 0
                ) -> LossReport:
    return LossReport(
        net=net,
        components={k: scalar(v) for k, v in components.items()},
        weights=dict(weights),
        total=scalar(total),
        adv_d=scalar(adv_d) if adv_d is not None else 0.0,
        clamp_events=clamp_events,
    )
