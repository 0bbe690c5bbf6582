import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from edgefsr.core import DataConfig, NetConfig, RunConfig, TrainConfig  # noqa: E402

torch.set_num_threads(1)
torch.use_deterministic_algorithms(True)


def tiny_config(**train) -> RunConfig:
    """Small widths and a 32px HR size so whole training steps take milliseconds."""
    t = dict(stage1_batch=2, stage2_batch=2, stage1_epochs=1, stage2_epochs=1, seed=0)
    t.update(train)
    return RunConfig(
        train=TrainConfig(**t),
        network=NetConfig(sr_channels=4, sr_groups=1, de_channels=4, de_blocks=1, disc_channels=4),
        data=DataConfig(hr_size=32, flip=False),
    )


def synthetic_faces(n, size, seed=0):
    """Smooth blob images in [-1, 1]: an ellipse 'face', two darker 'eyes', a gradient background."""
    g = torch.Generator().manual_seed(seed)
    yy, xx = torch.meshgrid(torch.linspace(-1, 1, size), torch.linspace(-1, 1, size), indexing="ij")
    out = []
    for _ in range(n):
        r = torch.rand(8, generator=g)
        face = ((xx / (0.55 + 0.1 * r[0])) ** 2 + (yy / (0.7 + 0.1 * r[1])) ** 2 < 1).float()
        eyes = sum((((xx - s * 0.25) ** 2 + (yy + 0.2) ** 2) < 0.012).float() for s in (-1, 1))
        img = torch.stack([
            -0.6 + 0.3 * yy + face * (1.0 + 0.3 * r[2]) - 0.8 * eyes,
            -0.7 + 0.2 * xx + face * (0.8 + 0.3 * r[3]) - 0.8 * eyes,
            -0.5 - 0.2 * yy + face * (0.6 + 0.3 * r[4]) - 0.6 * eyes,
        ])
        out.append(img.clamp(-1, 1))
    return torch.stack(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# ---------------------------------------------------------------- acceptance summary

_acceptance = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _acceptance.append((props["criterion"], status, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(_acceptance, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
