"""Corpus scanning, image I/O and deterministic batch streams."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .core import to_display, to_internal
from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
ROLES = ("hr", "real_lr")


@dataclass(frozen=True)
class CorpusManifest:
    root: str
    role: str
    files: Tuple[str, ...]
    size: Optional[int] = None
    skipped: Tuple[str, ...] = ()

    def __len__(self):
        return len(self.files)

    def paths(self):
        return [Path(self.root) / f for f in self.files]

    def digest(self) -> str:
        payload = json.dumps({"role": self.role, "files": list(self.files), "size": self.size}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_json(self) -> str:
        d = asdict(self)
        d["digest"] = self.digest()
        return json.dumps(d, indent=2, sort_keys=True)


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.load()
        return True
    except Exception:
        return False


def scan_corpus(root, role: str, size: Optional[int] = None, cache: bool = True) -> CorpusManifest:
    """List the decodable images under ``root`` in sorted order.

    Undecodable files are logged and excluded. With ``cache`` the manifest is
    written as JSON next to the corpus directory (best effort).
    """
    if role not in ROLES:
        raise ConfigError(f"unknown corpus role {role!r}; expected one of {ROLES}")
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"corpus directory does not exist: {root}")
    files, skipped = [], []
    for p in sorted(root.iterdir()):
        if not p.is_file() or p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if _decodable(p):
            files.append(p.name)
        else:
            log.warning("skipping undecodable image %s", p)
            skipped.append(p.name)
    if not files:
        raise ConfigError(f"no usable images in {root}")
    manifest = CorpusManifest(str(root), role, tuple(files), size, tuple(skipped))
    if cache:
        target = root.parent / f"{root.name}.{role}.manifest.json"
        try:
            target.write_text(manifest.to_json())
        except OSError as e:
            log.debug("could not write manifest cache %s: %s", target, e)
    return manifest


def read_image(path) -> torch.Tensor:
    """8-bit RGB image as a uint8 tensor (3, H, W)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1)


def write_image(path, img: torch.Tensor, internal: bool = True):
    """Save a (3, H, W), (1, H, W) or (H, W) tensor as an 8-bit PNG."""
    x = img.detach().cpu()
    if internal:
        x = to_display(x)
    x = x.clamp(0, 255).round().to(torch.uint8)
    if x.ndim == 3:
        x = x.permute(1, 2, 0)
        if x.shape[-1] == 1:
            x = x[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(x.numpy()).save(path)


def center_crop_resize(img: torch.Tensor, size: int) -> torch.Tensor:
    """Center-crop a uint8 (3, H, W) image to a square and resize it to ``size`` (bicubic)."""
    _, h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    img = img[:, top : top + s, left : left + s]
    if s != size:
        pil = Image.fromarray(img.permute(1, 2, 0).numpy())
        pil = pil.resize((size, size), Image.BICUBIC)
        img = torch.from_numpy(np.asarray(pil).copy()).permute(2, 0, 1)
    return img


def load_corpus(manifest: CorpusManifest, size: int, dtype=torch.float32) -> torch.Tensor:
    """Decode, crop/resize and normalize every image: (N, 3, size, size) in [-1, 1]."""
    out = []
    for p in manifest.paths():
        img = center_crop_resize(read_image(p), size)
        if tuple(img.shape) != (3, size, size):
            raise ValidationError(f"{p}: preprocessed to {tuple(img.shape)}, expected (3, {size}, {size})")
        out.append(img)
    return to_internal(torch.stack(out).to(dtype))


def load_paired(root, hr_size: int, scale: int, dtype=torch.float32):
    """Load ``root/lr`` and ``root/hr`` images matched by file name."""
    root = Path(root)
    lr_m = scan_corpus(root / "lr", "real_lr", cache=False)
    hr_m = scan_corpus(root / "hr", "hr", cache=False)
    common = sorted(set(lr_m.files) & set(hr_m.files))
    if not common:
        raise ConfigError(f"no matching lr/hr file names under {root}")
    lr_m = CorpusManifest(lr_m.root, lr_m.role, tuple(common))
    hr_m = CorpusManifest(hr_m.root, hr_m.role, tuple(common))
    return load_corpus(lr_m, hr_size // scale, dtype), load_corpus(hr_m, hr_size, dtype)


class BatchStream:
    """Deterministic minibatches over one or more aligned image tensors.

    The order within an epoch is a permutation keyed by (seed, stream_id,
    epoch); the optional horizontal flips come from the same key, so a batch
    is a pure function of (seed, stream_id, epoch, index).
    """

    def __init__(self, tensors: Sequence[torch.Tensor], batch_size: int, seed: int, flip: bool = False,
                 with_replacement: bool = False, stream_id: int = 0):
        if isinstance(tensors, torch.Tensor):
            tensors = (tensors,)
        self.tensors = tuple(tensors)
        n = self.tensors[0].shape[0]
        if n == 0:
            raise ConfigError("cannot batch an empty corpus")
        if any(t.shape[0] != n for t in self.tensors):
            raise ValidationError("aligned tensors must have the same length")
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if batch_size > n and not with_replacement:
            raise ConfigError(f"batch_size {batch_size} exceeds corpus size {n}; enable sampling with replacement")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.flip = flip
        self.with_replacement = with_replacement
        self.stream_id = stream_id

    @property
    def steps_per_epoch(self) -> int:
        if self.with_replacement:
            return max(1, self.n // self.batch_size)
        return math.ceil(self.n / self.batch_size)

    def _rng(self, epoch: int):
        return np.random.default_rng([self.seed, self.stream_id, epoch])

    def epoch_plan(self, epoch: int):
        """(indices, flips) for a whole epoch."""
        rng = self._rng(epoch)
        if self.with_replacement:
            idx = rng.integers(0, self.n, size=self.steps_per_epoch * self.batch_size)
        else:
            idx = rng.permutation(self.n)
        flips = rng.random(idx.shape[0]) < 0.5
        return idx, flips

    def batch(self, epoch: int, index: int):
        if not 0 <= index < self.steps_per_epoch:
            raise ValidationError(f"batch index {index} outside epoch of {self.steps_per_epoch} batches")
        idx, flips = self.epoch_plan(epoch)
        sl = slice(index * self.batch_size, (index + 1) * self.batch_size)
        sel = torch.from_numpy(idx[sl].astype(np.int64))
        out = []
        for t in self.tensors:
            b = t.index_select(0, sel)
            if self.flip:
                mask = torch.from_numpy(flips[sl])
                b = torch.where(mask.view(-1, 1, 1, 1), b.flip(-1), b)
            out.append(b)
        return out[0] if len(out) == 1 else tuple(out)

    def at_step(self, step: int):
        epoch, index = divmod(step, self.steps_per_epoch)
        return self.batch(epoch, index)


def next_batch(images: torch.Tensor, batch_size: int, seed: int, epoch: int, index: int = 0,
               flip: bool = False, with_replacement: bool = False) -> torch.Tensor:
    return BatchStream(images, batch_size, seed, flip, with_replacement).batch(epoch, index)
