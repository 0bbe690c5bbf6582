import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from edgefsr.core import LossWeights
from edgefsr.errors import ValidationError
from edgefsr.losses import (
    EPS,
    adversarial_loss_d,
    adversarial_loss_g,
    clamp_scores,
    content_loss,
    count_clamped,
    cycle_loss,
    make_report,
    mse,
    recon_loss_multi,
    total_denet_loss,
    total_snet_loss,
    total_tnet_loss,
)

W = LossWeights()


def t(v, shape=(4,)):
    return torch.full(shape, float(v), dtype=torch.float64)


# ---------------------------------------------------------------- values


def test_content_loss():
    a = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    assert content_loss(a, a) == 0
    assert content_loss(a + 0.5, a).item() == pytest.approx(0.5)
    b = torch.rand_like(a)
    assert content_loss(a, b) == content_loss(b, a)
    with pytest.raises(ValidationError):
        content_loss(a, a[:, :2])


def test_adversarial_d():
    assert adversarial_loss_d(t(0.5), t(0.5)).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert adversarial_loss_d(t(1 - 1e-9), t(1e-9)).item() < 1e-6
    r, f = torch.tensor([0.9, 0.3], dtype=torch.float64), torch.tensor([0.2, 0.6], dtype=torch.float64)
    per = [adversarial_loss_d(r[i : i + 1], f[i : i + 1]).item() for i in range(2)]
    assert adversarial_loss_d(r, f).item() == pytest.approx(sum(per) / 2)


def test_adversarial_g():
    assert adversarial_loss_g(t(1.0)).item() == pytest.approx(0, abs=1e-6)
    assert adversarial_loss_g(t(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    vals = [adversarial_loss_g(t(p)).item() for p in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_clamping_keeps_losses_finite_and_is_counted():
    s = torch.tensor([0.0, 1.0, 0.5, 1.5, -0.1])
    assert count_clamped(s) == 4
    c = clamp_scores(s)
    assert c.min() >= EPS and c.max() <= 1 - EPS
    assert math.isfinite(adversarial_loss_d(s, s).item())
    assert math.isfinite(adversarial_loss_g(torch.zeros(3)).item())


def test_opposing_objectives():
    near_one = t(1 - 1e-12)
    assert adversarial_loss_g(near_one).item() < 1e-6
    d_term = adversarial_loss_d(t(1.0), near_one).item()
    assert d_term == pytest.approx(-math.log(EPS), rel=1e-3)  # saturated at the clamp


def test_recon_loss_multi():
    target = torch.zeros(1, 3, 4, 4, dtype=torch.float64)
    assert recon_loss_multi([target, target], target) == 0
    a = torch.full_like(target, math.sqrt(0.1))
    b = torch.full_like(target, math.sqrt(0.3))
    assert recon_loss_multi([a, b], target).item() == pytest.approx(0.2)
    assert recon_loss_multi([a], target).item() == pytest.approx(mse(a, target).item())
    with pytest.raises(ValidationError):
        recon_loss_multi([], target)
    with pytest.raises(ValidationError):
        recon_loss_multi([a[..., :2]], target)


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(4)), st.integers(0, 1000))
def test_recon_loss_permutation_invariant(perm, seed):
    g = torch.Generator().manual_seed(seed)
    xs = [torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64) for _ in range(4)]
    y = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    assert recon_loss_multi(xs, y).item() == pytest.approx(recon_loss_multi([xs[i] for i in perm], y).item(),
                                                           rel=1e-12)


def test_cycle_loss():
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    assert cycle_loss(x, x) == 0
    assert cycle_loss(x, x + 0.1).item() == pytest.approx(0.01)
    assert cycle_loss(x, torch.rand_like(x)) >= 0
    with pytest.raises(ValidationError):
        cycle_loss(x, x[:1])


def test_totals_use_default_weights():
    one = torch.tensor(1.0)
    assert total_denet_loss(one, one, W).item() == pytest.approx(1.05)
    assert total_tnet_loss(torch.tensor(2.0), one, W).item() == pytest.approx(2.001)
    assert total_snet_loss(one, one, one, W).item() == pytest.approx(2.001)
    zero = torch.tensor(0.0)
    assert total_denet_loss(zero, zero, W) == total_tnet_loss(zero, zero, W) == total_snet_loss(zero, zero, zero, W) == 0
    assert total_snet_loss(one, one, torch.tensor(123.0), W, use_cycle=False).item() == pytest.approx(1.001)


def test_weight_linearity():
    c, a, y = torch.tensor(0.7), torch.tensor(1.3), torch.tensor(0.4)
    w2 = LossWeights(beta1=2 * W.beta1)
    assert (total_denet_loss(c, a, w2) - total_denet_loss(c, a, W)).item() == pytest.approx(W.beta1 * 1.3)
    for k in (0.0, 0.5, 3.0):
        wk = W.scaled(k)
        assert total_denet_loss(c, a, wk).item() == pytest.approx(k * total_denet_loss(c, a, W).item())
        assert total_tnet_loss(c, a, wk).item() == pytest.approx(k * total_tnet_loss(c, a, W).item())
        assert total_snet_loss(c, a, y, wk).item() == pytest.approx(k * total_snet_loss(c, a, y, W).item())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_nonnegative_and_zero_iff_equal(seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    b = torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64)
    for f in (content_loss, mse, cycle_loss):
        assert f(a, b) > 0 and f(a, a) == 0
    s = torch.rand(4, generator=g, dtype=torch.float64)
    assert adversarial_loss_d(s, s.flip(0)) >= 0 and adversarial_loss_g(s) >= 0


def test_report_total_is_weighted_sum():
    comps = {"rec": torch.tensor(0.3), "adv_g": torch.tensor(0.7), "cycle": torch.tensor(0.2)}
    weights = {"rec": W.alpha3, "adv_g": W.beta3, "cycle": W.gamma}
    total = total_snet_loss(comps["rec"], comps["adv_g"], comps["cycle"], W)
    r = make_report("snet", comps, weights, total, adversarial_loss_d(t(0.5), t(0.5)), 2)
    assert abs(r.total - r.weighted_sum()) < 1e-6
    d = r.as_dict()
    assert d["net"] == "snet" and d["clamp_events"] == 2 and d["adv_d"] == pytest.approx(2 * math.log(2))


# ---------------------------------------------------------------- gradients


def _check(f, *inputs, eps=1e-3, tol=1e-4):
    xs = [x.clone().requires_grad_(True) for x in inputs]
    grads = torch.autograd.grad(f(*xs), xs)
    for i, x in enumerate(xs):
        fd = oracles.central_fd(lambda: f(*xs), x.data, eps)
        assert oracles.rel_err(grads[i], fd) < tol


def _away_from(a, margin, g):
    # b - a has magnitude >= margin, so |.| has no kink within eps
    sign = torch.where(torch.rand(a.shape, generator=g, dtype=a.dtype) < 0.5, -1.0, 1.0)
    return a + sign * (margin + torch.rand(a.shape, generator=g, dtype=a.dtype))


@pytest.mark.parametrize("size", [4, 8])
def test_loss_gradients(size):
    g = torch.Generator().manual_seed(size)
    a = torch.randn(1, 1, size, size, generator=g, dtype=torch.float64)
    b = _away_from(a, 0.05, g)
    _check(content_loss, a, b)
    _check(mse, a, b)
    _check(cycle_loss, a, b)
    _check(lambda x, y: recon_loss_multi([x, 0.5 * x, x * x], y), a, b)
    sr = torch.rand(size, 1, generator=g, dtype=torch.float64) * 0.6 + 0.2
    sf = torch.rand(size, 1, generator=g, dtype=torch.float64) * 0.6 + 0.2
    _check(adversarial_loss_d, sr, sf)
    _check(adversarial_loss_g, sf)
    _check(lambda x, y: total_snet_loss(recon_loss_multi([x], y), adversarial_loss_g(torch.sigmoid(x.mean())),
                                        cycle_loss(x, y), W), a, b)
