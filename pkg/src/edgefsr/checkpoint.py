"""Checkpoint directories: one ``<net>.pt`` per network, optimizer and RNG
state, the resolved config and a ``manifest.json``."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Optional

import torch
import torch.nn as nn

from .config import dump_config, load_config
from .core import RunConfig
from .errors import CheckpointError

MANIFEST = "manifest.json"

# network name -> architecture family
NET_KINDS = {
    "denet": "degradation",
    "dsnet": "degradation",
    "tnet": "srnet",
    "snet": "srnet",
    "disc_lr": "disc_lr",
    "disc_hr": "disc_hr",
    "disc_hr_s": "disc_hr",
}


def spec_hash(cfg: RunConfig, name: str) -> str:
    """Hash of everything that determines the parameter layout of network ``name``."""
    kind = NET_KINDS.get(name)
    if kind is None:
        raise CheckpointError(f"unknown network name {name!r}")
    n, t = cfg.network, cfg.train
    if kind == "degradation":
        spec = {"scale": t.scale_factor, "channels": n.de_channels, "blocks": n.de_blocks}
    elif kind == "srnet":
        spec = {"scale": t.scale_factor, "channels": n.sr_channels, "groups": n.sr_groups,
                "proj_stride": n.proj_stride}
    else:
        size = cfg.data.hr_size if kind == "disc_hr" else cfg.lr_size
        spec = {"size": size, "channels": n.disc_channels}
    payload = json.dumps({"kind": kind, **spec}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def param_hash(net: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in net.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, nets: Mapping[str, nn.Module], cfg: RunConfig, *, epoch: int, step: int,
                    lr: float, stage: int, optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, net in nets.items():
        torch.save(net.state_dict(), path / f"{name}.pt")
    if optimizers:
        torch.save({k: o.state_dict() for k, o in optimizers.items()}, path / "optim.pt")
    torch.save(torch.get_rng_state(), path / "rng.pt")
    (path / "config.toml").write_text(dump_config(cfg))
    manifest = {
        "stage": stage,
        "epoch": epoch,
        "step": step,
        "lr": lr,
        "seed": cfg.train.seed,
        "networks": sorted(nets),
        "spec_hash": {name: spec_hash(cfg, name) for name in nets},
    }
    if extra:
        manifest.update(extra)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    p = Path(path) / MANIFEST
    if not p.is_file():
        raise CheckpointError(f"not a checkpoint directory (no {MANIFEST}): {path}")
    return json.loads(p.read_text())


def checkpoint_config(path) -> RunConfig:
    p = Path(path) / "config.toml"
    if not p.is_file():
        raise CheckpointError(f"checkpoint has no config.toml: {path}")
    return load_config(p)


def load_checkpoint(path, nets: Mapping[str, nn.Module], cfg: RunConfig,
                    optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
                    restore_rng: bool = False) -> dict:
    """Load parameters (and optionally optimizer/RNG state) in place; returns the manifest.

    Raises :class:`CheckpointError` when a network is missing or was saved
    for a different architecture than ``cfg`` describes.
    """
    path = Path(path)
    manifest = read_manifest(path)
    for name, net in nets.items():
        saved = manifest.get("spec_hash", {}).get(name)
        if saved is None or not (path / f"{name}.pt").is_file():
            raise CheckpointError(f"checkpoint {path} has no network {name!r}")
        if saved != spec_hash(cfg, name):
            raise CheckpointError(f"checkpoint {path}: spec hash mismatch for {name!r}")
        net.load_state_dict(torch.load(path / f"{name}.pt", weights_only=True))
    if optimizers:
        state = torch.load(path / "optim.pt", weights_only=True)
        for k, opt in optimizers.items():
            opt.load_state_dict(state[k])
    if restore_rng:
        torch.set_rng_state(torch.load(path / "rng.pt", weights_only=True))
    return manifest

