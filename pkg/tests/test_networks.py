import pytest
import torch

import oracles
from edgefsr.core import EdgePriorMap, RunConfig
from edgefsr.errors import ConfigError, ValidationError
from edgefsr.networks import (
    DegradationNet,
    Discriminator,
    SRNet,
    build_degradation_net,
    build_discriminator,
    build_srnet,
    count_parameters,
)
from edgefsr.resample import bilinear_upsample


def small_srnet(seed=0, **kw):
    torch.manual_seed(seed)
    kw.setdefault("channels", 4)
    kw.setdefault("groups", 1)
    return SRNet(scale=4, **kw)


def randomize_recb(net, std=0.3):
    torch.nn.init.normal_(net.recb[-1].weight, std=std)
    torch.nn.init.normal_(net.recb[-1].bias, std=std)


# ---------------------------------------------------------------- DeNet / DSNet


def test_degradation_net_shapes_and_batch_order():
    torch.manual_seed(0)
    net = DegradationNet(4, channels=8, n_blocks=2)
    x = torch.randn(3, 3, 64, 64)
    y = net(x)
    assert y.shape == (3, 3, 16, 16)
    assert torch.allclose(net(x[1:2]), y[1:2], atol=1e-6)
    assert sum(isinstance(m, torch.nn.Conv2d) and m.stride == (2, 2) for m in net.modules()) == 2
    with pytest.raises(ValidationError):
        net(torch.randn(1, 3, 62, 64))
    with pytest.raises(ConfigError):
        DegradationNet(3)


def test_degradation_net_determinism_and_full_gradient():
    nets = []
    for _ in range(2):
        torch.manual_seed(7)
        nets.append(DegradationNet(4, channels=8, n_blocks=2))
    x = torch.randn(2, 3, 32, 32)
    assert torch.equal(nets[0](x), nets[1](x))
    (nets[0](x) ** 2).mean().backward()
    for name, p in nets[0].named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name


def test_default_degradation_net_matches_description():
    net = build_degradation_net(RunConfig())
    assert len(net.body) == 16 and net.head.out_channels == 64


# ---------------------------------------------------------------- SR net


def test_srnet_shapes_and_count():
    for n in (1, 2, 3, 5):
        net = small_srnet(n_iterations=n)
        outs = net(torch.rand(2, 3, 16, 16) * 2 - 1)
        assert len(outs) == n
        assert all(o.shape == (2, 3, 64, 64) for o in outs)
    with pytest.raises(ConfigError):
        SRNet(n_iterations=0)
    with pytest.raises(ValidationError):
        small_srnet()(torch.zeros(1, 1, 8, 8))


def test_srnet_starts_at_bilinear_identity():
    net = small_srnet()
    lr = torch.rand(1, 3, 16, 16) * 2 - 1
    base = bilinear_upsample(lr, 4)
    for out in net(lr):
        assert (out - base).abs().max() < 1e-6


def test_srnet_states_follow_schedule():
    net = small_srnet()
    randomize_recb(net)
    outs, states = net.run(torch.rand(1, 3, 8, 8) * 2 - 1)
    s1, s2, s3 = states
    assert s1.f_fb is None and s1.f_prior is None and s1.prior is None
    assert s1.f_sf.shape[-2:] == (32, 32)
    assert s2.prior.kind == "canny" and s2.prior.source_iteration == 1
    assert s3.prior.kind == "dog" and s3.prior.source_iteration == 2
    assert s2.f_fb is not None and s3.f_prior is not None
    assert not s2.prior.data.requires_grad and not s3.prior.data.requires_grad


def test_later_iterations_get_dog_prior():
    net = small_srnet(n_iterations=5)
    randomize_recb(net)
    _, states = net.run(torch.rand(1, 3, 8, 8) * 2 - 1)
    assert [s.prior.kind for s in states[1:]] == ["canny", "dog", "dog", "dog"]


def test_ablation_flags_skip_priors():
    for canny, dog, kinds in ((False, True, [None, "dog"]), (True, False, ["canny", None])):
        net = small_srnet(use_canny=canny, use_dog=dog)
        randomize_recb(net)
        _, states = net.run(torch.rand(1, 3, 8, 8) * 2 - 1)
        assert [s.prior.kind if s.prior else None for s in states[1:]] == kinds


def test_prior_free_bit_identical_to_disabled_priors():
    a = small_srnet(seed=3, use_canny=False, use_dog=False)
    b = small_srnet(seed=3, prior_free=True)
    assert not hasattr(b, "embed")
    for net in (a, b):
        torch.manual_seed(11)
        randomize_recb(net)
    lr = torch.rand(2, 3, 8, 8) * 2 - 1
    for x, y in zip(a(lr), b(lr)):
        assert torch.equal(x, y)


def test_disabled_priors_only_change_prior_path():
    full = small_srnet(seed=5)
    ablated = small_srnet(seed=5, use_canny=False)
    ablated.load_state_dict(full.state_dict())
    for net in (full, ablated):
        torch.manual_seed(1)
        randomize_recb(net)
    lr = torch.rand(1, 3, 8, 8) * 2 - 1
    (fo, fs), (ao, as_) = full.run(lr), ablated.run(lr)
    assert torch.equal(fo[0], ao[0])
    assert torch.equal(fs[1].f_sf, as_[1].f_sf) and torch.equal(fs[1].f_fb, as_[1].f_fb)
    assert fs[1].f_prior is not None and as_[1].f_prior is None
    assert not torch.equal(fo[1], ao[1])


def test_tnet_snet_independent():
    cfg = RunConfig()
    torch.manual_seed(0)
    t, s = build_srnet(cfg), build_srnet(cfg)
    assert not {id(p) for p in t.parameters()} & {id(p) for p in s.parameters()}
    lr = torch.rand(1, 3, 16, 16) * 2 - 1
    with torch.no_grad():
        before = s(lr)[-1]
        for p in t.parameters():
            p.add_(1.0)
        assert torch.equal(s(lr)[-1], before)


def test_prior_embedding_carries_no_gradient_to_iteration_one():
    net = small_srnet()
    randomize_recb(net)
    _, states = net.run(torch.rand(1, 3, 8, 8) * 2 - 1)
    early = list(net.sfe.parameters()) + list(net.recb.parameters()) + list(net.feedback.parameters())
    for s in states[1:]:
        grads = torch.autograd.grad(s.f_prior.sum(), early, allow_unused=True)
        assert all(g is None for g in grads)


def test_fixed_priors_override():
    net = small_srnet()
    randomize_recb(net)
    lr = torch.rand(1, 3, 8, 8) * 2 - 1
    outs, states = net.run(lr)
    frozen = {s.t: s.prior for s in states if s.prior is not None}
    for x, y in zip(outs, net(lr, frozen)):
        assert torch.equal(x, y)
    other = {2: EdgePriorMap(torch.ones(1, 1, 32, 32), "canny", 1), 3: frozen[3]}
    assert not torch.equal(net(lr, other)[1], outs[1])


def _fd_suite(net, eps, seed=1):
    lr = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)) * 2 - 1
    _, states = net.run(lr)
    priors = {s.t: s.prior for s in states if s.prior is not None}

    def f():
        return (net(lr, priors)[-1] ** 2).sum()

    net.zero_grad()
    f().backward()
    return max(oracles.rel_err(p.grad, oracles.central_fd(f, p.data, eps)) for p in net.parameters())


def tiny_fd_net(seed=0, unit_slopes=True):
    net = small_srnet(seed=seed, channels=2).double()
    randomize_recb(net, 0.5)
    if unit_slopes:
        for m in net.modules():
            if isinstance(m, torch.nn.PReLU):
                torch.nn.init.ones_(m.weight)
    return net


def test_srnet_gradient_default_slopes():
    # with the initial 0.25 slopes every PReLU has a kink; a small step keeps
    # the central difference on one side of nearly all of them
    assert _fd_suite(tiny_fd_net(unit_slopes=False), 1e-5) < 5e-3


# ---------------------------------------------------------------- discriminator


def test_discriminator_range_shape_and_size_check():
    torch.manual_seed(0)
    for size in (8, 16, 32, 64):
        d = Discriminator(size, channels=4)
        x = torch.randn(5, 3, size, size) * 3
        s = d(x)
        assert s.shape == (5, 1)
        assert torch.all((s > 0) & (s < 1))
        perm = torch.tensor([3, 0, 4, 1, 2])
        assert torch.allclose(d(x[perm]), s[perm])
        with pytest.raises(ValidationError):
            d(torch.randn(1, 3, size * 2, size * 2))


def test_discriminator_determinism_and_domains():
    cfg = RunConfig()
    outs = []
    for _ in range(2):
        torch.manual_seed(4)
        outs.append(build_discriminator(cfg, "lr")(torch.ones(1, 3, 16, 16)))
    assert torch.equal(*outs)
    assert build_discriminator(cfg, "hr").in_size == 64
    assert count_parameters(build_discriminator(cfg, "hr")) > 0
