"""Two-stage training.

Stage 1 trains the degradation network (DeNet) against real LR images.
Stage 2 jointly trains the teacher SR net on DeNet pairs and the student SR
net on real LR images, guided by the teacher and closed by a DSNet cycle.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import checkpoint_config, load_checkpoint, save_checkpoint, spec_hash
from .core import RunConfig, TrainConfig
from .data import BatchStream, write_image
from .errors import CheckpointError, ConfigError, NonFiniteLossError
from .losses import (
    LossReport,
    scalar,
    adversarial_loss_d,
    adversarial_loss_g,
    content_loss,
    count_clamped,
    cycle_loss,
    make_report,
    recon_loss_multi,
    total_denet_loss,
    total_snet_loss,
    total_tnet_loss,
)
from .networks import build_degradation_net, build_discriminator, build_srnet
from .resample import bicubic_downsample

log = logging.getLogger(__name__)

LOSS_LOG = "losses.jsonl"


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Initial rate halved every ``lr_half_period_epochs`` epochs."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_half_period_epochs)


def configure_determinism(threads: int = 1):
    """Single-threaded, deterministic kernels: needed for byte-identical loss logs."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def set_requires_grad(nets: Iterable[nn.Module], flag: bool):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def _to_grid_column(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-1] != size:
        x = F.interpolate(x, size=(size, size), mode="nearest")
    return x


def save_sample_grid(path, columns: List[torch.Tensor], max_rows: int = 4):
    """One row per sample, columns side by side (all resized to the largest)."""
    size = max(c.shape[-1] for c in columns)
    cols = [_to_grid_column(c[:max_rows].detach().float(), size) for c in columns]
    rows = torch.cat(cols, dim=-1)
    grid = torch.cat(list(rows), dim=-2)
    write_image(path, grid)


class Trainer:
    """Step loop, loss log, lr schedule and checkpointing shared by both stages."""

    stage = 0

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.step = 0
        self.out_dir: Optional[Path] = None
        self.final_checkpoint: Optional[Path] = None
        self.audit: Optional[Callable[[str, "Trainer"], None]] = None

    # subclasses fill these in
    def networks(self) -> Dict[str, nn.Module]:
        raise NotImplementedError

    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        raise NotImplementedError

    @property
    def steps_per_epoch(self) -> int:
        raise NotImplementedError

    @property
    def n_epochs(self) -> int:
        raise NotImplementedError

    def train_step(self) -> dict:
        raise NotImplementedError

    def samples(self) -> List[torch.Tensor]:
        raise NotImplementedError

    @property
    def epoch(self) -> int:
        return self.step // self.steps_per_epoch

    def _apply_lr(self) -> float:
        lr = lr_schedule(self.epoch, self.cfg.train)
        for opt in self.optimizers().values():
            for g in opt.param_groups:
                g["lr"] = lr
        return lr

    def _check_lr(self, lr: float):
        for name, opt in self.optimizers().items():
            for g in opt.param_groups:
                assert g["lr"] == lr, f"optimizer {name} runs at {g['lr']}, schedule says {lr}"

    def _record(self, lr: float, reports: List[LossReport]) -> dict:
        return {
            "stage": self.stage,
            "step": self.step,
            "epoch": self.epoch,
            "lr": lr,
            "reports": [r.as_dict() for r in reports],
        }

    def _guard_finite(self, net: str, **terms: torch.Tensor):
        """Abort before an optimizer step when any loss term is NaN or infinite.

        Runs ahead of the update, so the diagnostic checkpoint holds the last
        finite parameters.
        """
        values = {k: scalar(v) for k, v in terms.items()}
        if all(math.isfinite(v) for v in values.values()):
            return
        where = ""
        if self.out_dir is not None:
            where = f"; diagnostic checkpoint at {self.save(self.out_dir / 'diagnostic')}"
        raise NonFiniteLossError(f"non-finite {net} loss at step {self.step}: {values}{where}")

    def save(self, path) -> Path:
        return save_checkpoint(path, self.networks(), self.cfg, epoch=self.epoch, step=self.step,
                               lr=lr_schedule(self.epoch, self.cfg.train), stage=self.stage,
                               optimizers=self.optimizers())

    def load(self, path):
        manifest = load_checkpoint(path, self.networks(), self.cfg, self.optimizers(), restore_rng=True)
        if manifest.get("stage") != self.stage:
            raise CheckpointError(f"{path} is a stage-{manifest.get('stage')} checkpoint, expected stage {self.stage}")
        self.step = manifest["step"]
        return manifest

    @property
    def total_steps(self) -> int:
        n = self.n_epochs * self.steps_per_epoch
        if self.cfg.train.max_steps:
            n = min(n, self.cfg.train.max_steps)
        return n

    def fit(self, out_dir=None) -> Optional[Path]:
        """Run until ``total_steps``; with ``out_dir`` write the loss log,
        periodic checkpoints/samples and a final checkpoint (returned)."""
        out = self.out_dir = Path(out_dir) if out_dir is not None else None
        logf = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            logf = open(out / LOSS_LOG, "a")
        t = self.cfg.train
        try:
            while self.step < self.total_steps:
                record = self.train_step()
                if logf is not None:
                    logf.write(json.dumps(record, sort_keys=True) + "\n")
                    logf.flush()
                epoch_done = self.step % self.steps_per_epoch == 0
                if out is not None and epoch_done:
                    e = self.step // self.steps_per_epoch
                    if e % t.checkpoint_every == 0:
                        self.save(out / "checkpoints" / f"epoch_{e:04d}")
                    if e % t.sample_every == 0:
                        save_sample_grid(out / "samples" / f"epoch_{e:04d}.png", self.samples())
        finally:
            if logf is not None:
                logf.close()
        if out is None:
            return None
        self.final_checkpoint = self.save(out / "final")
        return self.final_checkpoint


class Stage1Trainer(Trainer):
    """DeNet vs. an LR-domain discriminator."""

    stage = 1

    def __init__(self, cfg: RunConfig, hr: torch.Tensor, real_lr: torch.Tensor):
        super().__init__(cfg)
        t, d = cfg.train, cfg.data
        if len(hr) == 0 or len(real_lr) == 0:
            raise ConfigError("stage 1 needs non-empty HR and real-LR sets")
        torch.manual_seed(t.seed)
        self.denet = build_degradation_net(cfg)
        self.disc = build_discriminator(cfg, "lr")
        self.opt_g = _adam(self.denet.parameters(), t)
        self.opt_d = _adam(self.disc.parameters(), t)
        self.hr_stream = BatchStream(hr, t.stage1_batch, t.seed, d.flip, d.with_replacement, stream_id=0)
        self.lr_stream = BatchStream(real_lr, t.stage1_batch, t.seed, d.flip, d.with_replacement, stream_id=1)
        self._last = None

    def networks(self):
        return {"denet": self.denet, "disc_lr": self.disc}

    def optimizers(self):
        return {"denet": self.opt_g, "disc_lr": self.opt_d}

    @property
    def steps_per_epoch(self):
        return self.hr_stream.steps_per_epoch

    @property
    def n_epochs(self):
        return self.cfg.train.stage1_epochs

    def train_step(self) -> dict:
        w, s = self.cfg.loss, self.cfg.train.scale_factor
        lr = self._apply_lr()
        hr = self.hr_stream.at_step(self.step)
        real = self.lr_stream.at_step(self.step)

        gen = self.denet(hr)
        with torch.no_grad():
            bic = bicubic_downsample(hr, s)

        set_requires_grad([self.disc], True)
        self.opt_d.zero_grad()
        d_real, d_fake = self.disc(real), self.disc(gen.detach())
        loss_d = adversarial_loss_d(d_real, d_fake)
        self._guard_finite("disc_lr", adv_d=loss_d)
        loss_d.backward()
        self._check_lr(lr)
        self.opt_d.step()

        set_requires_grad([self.disc], False)
        self.opt_g.zero_grad()
        d_gen = self.disc(gen)
        content = content_loss(gen, bic)
        adv = adversarial_loss_g(d_gen)
        total = total_denet_loss(content, adv, w)
        self._guard_finite("denet", content=content, adv_g=adv, total=total)
        total.backward()
        self.opt_g.step()
        set_requires_grad([self.disc], True)

        clamps = count_clamped(d_real) + count_clamped(d_fake) + count_clamped(d_gen)
        report = make_report("denet", {"content": content, "adv_g": adv},
                             {"content": w.alpha1, "adv_g": w.beta1}, total, loss_d, clamps)
        record = self._record(lr, [report])
        self._last = (hr, bic, gen.detach())
        self.step += 1
        return record

    def samples(self):
        hr, bic, gen = self._last
        return [hr, bic, gen]


class Stage2Trainer(Trainer):
    """Joint teacher / student training.

    Per step, in this order: HR discriminator(s), TNet, then SNet together
    with DSNet. The student's reconstruction target is the detached final
    output of the (just updated) teacher on the same real LR batch.
    """

    stage = 2

    def __init__(self, cfg: RunConfig, paired: Tuple[torch.Tensor, torch.Tensor], real_lr: torch.Tensor):
        super().__init__(cfg)
        t, d = cfg.train, cfg.data
        lr_gen, hr = paired
        if len(lr_gen) == 0 or len(real_lr) == 0:
            raise ConfigError("stage 2 needs a non-empty paired set and real-LR set")
        torch.manual_seed(t.seed)
        self.tnet = build_srnet(cfg)
        self.snet = build_srnet(cfg)
        self.dsnet = build_degradation_net(cfg)
        self.disc_t = build_discriminator(cfg, "hr")
        self.disc_s = build_discriminator(cfg, "hr") if t.split_hr_discriminator else self.disc_t
        self.opt_t = _adam(self.tnet.parameters(), t)
        self.opt_s = _adam(self.snet.parameters(), t)
        self.opt_ds = _adam(self.dsnet.parameters(), t)
        self.opt_d = _adam(self.disc_t.parameters(), t)
        self.opt_d_s = _adam(self.disc_s.parameters(), t) if t.split_hr_discriminator else None
        self.pair_stream = BatchStream((lr_gen, hr), t.stage2_batch, t.seed, d.flip, d.with_replacement,
                                       stream_id=2)
        self.real_stream = BatchStream(real_lr, t.stage2_batch, t.seed, d.flip, d.with_replacement,
                                       stream_id=3)
        self._last = None

    def networks(self):
        nets = {"tnet": self.tnet, "snet": self.snet, "dsnet": self.dsnet, "disc_hr": self.disc_t}
        if self.opt_d_s is not None:
            nets["disc_hr_s"] = self.disc_s
        return nets

    def optimizers(self):
        opts = {"tnet": self.opt_t, "snet": self.opt_s, "dsnet": self.opt_ds, "disc_hr": self.opt_d}
        if self.opt_d_s is not None:
            opts["disc_hr_s"] = self.opt_d_s
        return opts

    @property
    def steps_per_epoch(self):
        return self.pair_stream.steps_per_epoch

    @property
    def n_epochs(self):
        return self.cfg.train.stage2_epochs

    def _discs(self):
        return [self.disc_t] if self.opt_d_s is None else [self.disc_t, self.disc_s]

    def _notify(self, event: str):
        if self.audit is not None:
            self.audit(event, self)

    def train_step(self) -> dict:
        t, w = self.cfg.train, self.cfg.loss
        lr = self._apply_lr()
        lr_gen, hr = self.pair_stream.at_step(self.step)
        real = self.real_stream.at_step(self.step)

        sr_t = self.tnet(lr_gen)
        sr_s = self.snet(real)

        # HR discriminator(s) on the final-iteration outputs
        set_requires_grad(self._discs(), True)
        fake_t, fake_s = sr_t[-1].detach(), sr_s[-1].detach()
        clamps = 0
        if self.opt_d_s is None:
            self.opt_d.zero_grad()
            d_real, d_fake = self.disc_t(hr), self.disc_t(torch.cat([fake_t, fake_s]))
            loss_d = adversarial_loss_d(d_real, d_fake)
            self._guard_finite("disc_hr", adv_d=loss_d)
            loss_d.backward()
            self._check_lr(lr)
            self.opt_d.step()
            clamps += count_clamped(d_real) + count_clamped(d_fake)
            loss_d_t = loss_d_s = loss_d
        else:
            self.opt_d.zero_grad()
            self.opt_d_s.zero_grad()
            d_real_t, d_fake_t = self.disc_t(hr), self.disc_t(fake_t)
            d_real_s, d_fake_s = self.disc_s(hr), self.disc_s(fake_s)
            loss_d_t = adversarial_loss_d(d_real_t, d_fake_t)
            loss_d_s = adversarial_loss_d(d_real_s, d_fake_s)
            self._guard_finite("disc_hr", adv_d_t=loss_d_t, adv_d_s=loss_d_s)
            (loss_d_t + loss_d_s).backward()
            self._check_lr(lr)
            self.opt_d.step()
            self.opt_d_s.step()
            clamps += sum(count_clamped(x) for x in (d_real_t, d_fake_t, d_real_s, d_fake_s))
        set_requires_grad(self._discs(), False)

        # teacher
        self.opt_t.zero_grad()
        scores_t = [self.disc_t(sr) for sr in sr_t]
        rec_t = recon_loss_multi(sr_t, hr)
        adv_t = sum(adversarial_loss_g(s) for s in scores_t) / len(scores_t)
        total_t = total_tnet_loss(rec_t, adv_t, w)
        self._guard_finite("tnet", rec=rec_t, adv_g=adv_t, total=total_t)
        total_t.backward()
        self.opt_t.step()
        clamps_t = sum(count_clamped(s) for s in scores_t)

        # student (+ DSNet); the teacher is frozen from here on
        with torch.no_grad():
            pseudo_hr = self.tnet(real)[-1] if t.use_teacher_guidance else None
        self._notify("before_snet_update")
        self.opt_s.zero_grad()
        self.opt_ds.zero_grad()
        scores_s = [self.disc_s(sr) for sr in sr_s]
        adv_s = sum(adversarial_loss_g(s) for s in scores_s) / len(scores_s)
        zero = adv_s.new_zeros(())
        rec_s = recon_loss_multi(sr_s, pseudo_hr) if pseudo_hr is not None else zero
        cyc = cycle_loss(real, self.dsnet(sr_s[-1])) if t.use_cycle else zero
        total_s = total_snet_loss(rec_s, adv_s, cyc, w, use_cycle=t.use_cycle)
        self._guard_finite("snet", rec=rec_s, adv_g=adv_s, cycle=cyc, total=total_s)
        total_s.backward()
        self.opt_s.step()
        if t.use_cycle:
            self.opt_ds.step()
        self._notify("after_snet_update")
        set_requires_grad(self._discs(), True)
        clamps_s = sum(count_clamped(s) for s in scores_s)

        reports = [
            make_report("tnet", {"rec": rec_t, "adv_g": adv_t}, {"rec": w.alpha2, "adv_g": w.beta2},
                        total_t, loss_d_t, clamps + clamps_t),
            make_report("snet", {"rec": rec_s, "adv_g": adv_s, "cycle": cyc},
                        {"rec": w.alpha3 if pseudo_hr is not None else 0.0, "adv_g": w.beta3,
                         "cycle": w.gamma if t.use_cycle else 0.0},
                        total_s, loss_d_s, clamps_s),
        ]
        record = self._record(lr, reports)
        self._last = (lr_gen, [x.detach() for x in sr_t], hr)
        self.step += 1
        return record

    def samples(self):
        lr_gen, sr_t, hr = self._last
        return [lr_gen, *sr_t, hr]


@torch.no_grad()
def generate_pseudo_pairs(denet_ckpt, hr: torch.Tensor, cfg: Optional[RunConfig] = None,
                          batch_size: int = 16) -> Tuple[torch.Tensor, torch.Tensor]:
    """Run a trained DeNet over every HR image; returns (generated LR, HR).

    ``denet_ckpt`` is a checkpoint directory or an already built network.
    """
    if isinstance(denet_ckpt, nn.Module):
        denet = denet_ckpt
    else:
        path = Path(denet_ckpt)
        ckpt_cfg = checkpoint_config(path)
        if cfg is not None and spec_hash(cfg, "denet") != spec_hash(ckpt_cfg, "denet"):
            raise CheckpointError(f"{path}: DeNet spec hash does not match the current config")
        denet = build_degradation_net(ckpt_cfg)
        load_checkpoint(path, {"denet": denet}, ckpt_cfg)
    was_training = denet.training
    denet.eval()
    out = [denet(hr[i : i + batch_size]) for i in range(0, len(hr), batch_size)]
    denet.train(was_training)
    return torch.cat(out), hr


def train_stage1(cfg: RunConfig, hr: torch.Tensor, real_lr: torch.Tensor, out_dir=None) -> Stage1Trainer:
    """Train DeNet; with ``out_dir`` the final checkpoint is at ``trainer.final_checkpoint``."""
    trainer = Stage1Trainer(cfg, hr, real_lr)
    trainer.fit(out_dir)
    return trainer


def train_stage2(cfg: RunConfig, paired: Tuple[torch.Tensor, torch.Tensor], real_lr: torch.Tensor,
                 out_dir=None) -> Stage2Trainer:
    trainer = Stage2Trainer(cfg, paired, real_lr)
    trainer.fit(out_dir)
    return trainer
