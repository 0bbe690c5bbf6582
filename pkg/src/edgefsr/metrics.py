"""PSNR / SSIM on display-range images and a per-corpus evaluation table.

Corpus evaluation converts both images to BT.601 luminance first; the table
columns say so.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .core import LUMA_WEIGHTS
from .errors import ValidationError

log = logging.getLogger(__name__)


def _as_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def to_luma(x) -> np.ndarray:
    """(3, H, W) or (H, W, 3) RGB -> (H, W); 2-D input is returned as is."""
    x = _as_array(x)
    if x.ndim == 2:
        return x
    r, g, b = LUMA_WEIGHTS
    if x.ndim == 3 and x.shape[0] == 3:
        return r * x[0] + g * x[1] + b * x[2]
    if x.ndim == 3 and x.shape[-1] == 3:
        return r * x[..., 0] + g * x[..., 1] + b * x[..., 2]
    raise ValidationError(f"cannot convert shape {x.shape} to luminance")


def psnr(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValidationError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    err = np.mean((a - b) ** 2)
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable correlation, only positions where the whole window fits
    n = k.shape[0]
    x = np.lib.stride_tricks.sliding_window_view(x, n, axis=1) @ k
    return np.lib.stride_tricks.sliding_window_view(x, n, axis=0) @ k


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, K1: float = 0.01, K2: float = 0.03,
             L: float = 255.0) -> np.ndarray:
    a, b = to_luma(a), to_luma(b)
    if a.shape != b.shape:
        raise ValidationError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ValidationError(f"ssim: image {a.shape} is smaller than the {window}x{window} window")
    k = gaussian_window(window, sigma)
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window: int = 11, sigma: float = 1.5, K1: float = 0.01, K2: float = 0.03,
         L: float = 255.0) -> float:
    """Mean structural similarity over all fully contained Gaussian windows."""
    return float(ssim_map(a, b, window, sigma, K1, K2, L).mean())


@dataclass
class EvalTable:
    rows: List[Tuple[str, float, float]] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    @property
    def warnings(self) -> int:
        return len(self.skipped)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image", "psnr_y_db", "ssim_y"])
            for name, p, s in self.rows:
                w.writerow([name, _fmt(p), _fmt(s)])
            w.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim)])

    def format_text(self) -> str:
        width = max([len("image"), len("mean")] + [len(r[0]) for r in self.rows])
        lines = [f"{'image':<{width}}  {'PSNR-Y (dB)':>12}  {'SSIM-Y':>8}"]
        for name, p, s in self.rows:
            lines.append(f"{name:<{width}}  {_fmt(p, 3):>12}  {_fmt(s, 4):>8}")
        lines.append(f"{'mean':<{width}}  {_fmt(self.mean_psnr, 3):>12}  {_fmt(self.mean_ssim, 4):>8}")
        if self.skipped:
            lines.append(f"skipped: {', '.join(self.skipped)}")
        return "\n".join(lines)


def _fmt(v: float, digits: int = 6) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.{digits}f}"


def evaluate_corpus(sr_dir, ref_dir) -> EvalTable:
    """PSNR/SSIM (luminance) for every SR image whose file name exists in ``ref_dir``."""
    from .data import IMAGE_EXTENSIONS, read_image

    sr_dir, ref_dir = Path(sr_dir), Path(ref_dir)
    table = EvalTable()
    for p in sorted(sr_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        ref = ref_dir / p.name
        if not ref.is_file():
            log.warning("no reference image for %s", p.name)
            table.skipped.append(p.name)
            continue
        a, b = to_luma(read_image(p)), to_luma(read_image(ref))
        if a.shape != b.shape:
            log.warning("size mismatch for %s: %s vs %s", p.name, a.shape, b.shape)
            table.skipped.append(p.name)
            continue
        table.rows.append((p.name, psnr(a, b), ssim(a, b)))
    return table
