import numpy as np
import pytest
import torch

import oracles
from edgefsr.errors import ParameterError, ValidationError
from edgefsr.resample import bicubic_downsample, bilinear_upsample


def test_bilinear_identity_and_constant():
    x = torch.rand(2, 3, 5, 6)
    assert bilinear_upsample(x, 1) is x
    c = torch.full((1, 3, 4, 4), 0.3)
    up = bilinear_upsample(c, 4)
    assert up.shape == (1, 3, 16, 16)
    assert torch.allclose(up, torch.full_like(up, 0.3))


def test_bilinear_2x2_closed_form():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    got = bilinear_upsample(torch.from_numpy(x)[None, None], 2)[0, 0].numpy()
    expected = np.array([
        [0.0, 0.25, 0.75, 1.0],
        [0.5, 0.75, 1.25, 1.5],
        [1.5, 1.75, 2.25, 2.5],
        [2.0, 2.25, 2.75, 3.0],
    ])
    assert np.allclose(got, expected, atol=1e-12)
    assert np.allclose(got, oracles.bilinear_closed_form(x, 2), atol=1e-12)


def test_bilinear_random_matches_formula(rng):
    x = rng.normal(size=(5, 7))
    for f in (2, 3, 4):
        got = bilinear_upsample(torch.from_numpy(x)[None, None], f)[0, 0].numpy()
        assert np.allclose(got, oracles.bilinear_closed_form(x, f), atol=1e-12)


def test_bilinear_bad_factor():
    for f in (0, -2, 1.5):
        with pytest.raises(ParameterError):
            bilinear_upsample(torch.zeros(1, 1, 2, 2), f)


def test_bicubic_constant_and_shape():
    x = torch.full((2, 3, 64, 64), -0.4, dtype=torch.float64)
    y = bicubic_downsample(x, 4)
    assert y.shape == (2, 3, 16, 16)
    assert torch.allclose(y, torch.full_like(y, -0.4), atol=1e-12)


def test_bicubic_matches_dense_matrix(rng):
    x = rng.uniform(-1, 1, (32, 24))
    for f in (2, 4):
        A, B = oracles.bicubic_matrix(32, f), oracles.bicubic_matrix(24, f)
        got = bicubic_downsample(torch.from_numpy(x)[None, None], f)[0, 0].numpy()
        assert np.allclose(got, A @ x @ B.T, atol=1e-10)


def test_bicubic_ramp():
    ramp = np.tile(np.linspace(0, 1, 64), (64, 1))
    got = bicubic_downsample(torch.from_numpy(ramp)[None, None], 4)[0, 0].numpy()
    A = oracles.bicubic_matrix(64, 4)
    assert np.allclose(got, A @ ramp @ A.T, atol=1e-3)
    # interior samples land on the ramp at the output pixel centres
    centres = (np.arange(16) + 0.5) * 4 - 0.5
    assert np.allclose(got[0, 2:-2], centres[2:-2] / 63, atol=1e-3)
    assert abs(got.mean() - ramp.mean()) < 1e-3


def test_bicubic_indivisible():
    with pytest.raises(ValidationError):
        bicubic_downsample(torch.zeros(1, 3, 30, 32), 4)
