import math

import pytest
import torch

from steve.deconfound import (
    LOG_2PI, NodePooler, ReprPair, SslHeads, VariationalNet, adversarial_loss, club_loss,
    fit_variational, gaussian_log_density, grl, ssl_losses,
)
from steve.errors import LabelError



@pytest.fixture(autouse=True)
def _float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def affine_q(scale=2.0, shift=0.5, logvar=0.3) -> VariationalNet:
    """1-D q with mu = scale * relu(z_v) + shift and a constant log-variance."""
    q = VariationalNet(1, 1)
    with torch.no_grad():
        for p in q.parameters():
            p.zero_()
        q.mean_net[0].weight.fill_(1.0)
        q.mean_net[2].weight.fill_(scale)
        q.mean_net[2].bias.fill_(shift)
        q.logvar_net[2].bias.fill_(logvar)
    return q


def hand_club(zi, zv, scale=2.0, shift=0.5, logvar=0.3):
    def ll(x, v):
        mu = scale * max(v, 0.0) + shift
        return -0.5 * ((x - mu) ** 2 * math.exp(-logvar) + logvar + math.log(2 * math.pi))
    M = len(zi)
    return sum(ll(zi[i], zv[i]) - ll(zi[j], zv[i]) for i in range(M) for j in range(M)) / M**2


def test_club_two_sample_oracle():
    zi, zv = [0.7, -1.3], [0.4, 1.1]
    got = club_loss(torch.tensor(zi)[:, None], torch.tensor(zv)[:, None], affine_q())
    assert abs(got.item() - hand_club(zi, zv)) <= 1e-9


def test_club_single_sample_is_zero():
    q = VariationalNet(4, 8)
    assert club_loss(torch.randn(1, 4), torch.randn(1, 4), q).item() == 0.0


def test_club_identical_pairs_is_zero():
    q = VariationalNet(3, 5)
    zi = torch.randn(1, 3).expand(6, 3)
    zv = torch.randn(1, 3).expand(6, 3)
    assert club_loss(zi, zv, q).item() == 0.0


def test_club_permutation_invariant():
    q = VariationalNet(3, 4)
    zi, zv = torch.randn(7, 3), torch.randn(7, 3)
    perm = torch.randperm(7)
    torch.testing.assert_close(club_loss(zi[perm], zv[perm], q), club_loss(zi, zv, q))


def test_club_gradient_skips_q():
    q = VariationalNet(2, 3)
    zi = torch.randn(5, 2, requires_grad=True)
    club_loss(zi, torch.randn(5, 2), q).backward()
    assert zi.grad is not None
    assert all(p.grad is None for p in q.parameters())


def test_gaussian_log_density():
    x, mu, lv = torch.tensor([[1.0, 2.0]]), torch.tensor([[0.0, 1.0]]), torch.tensor([[0.0, math.log(4.0)]])
    expected = -0.5 * (1.0 + 0.0 + LOG_2PI) - 0.5 * (0.25 + math.log(4.0) + LOG_2PI)
    assert gaussian_log_density(x, mu, lv).item() == pytest.approx(expected, abs=1e-12)


def test_logvar_clamped():
    q = VariationalNet(1, 1)
    with torch.no_grad():
        q.logvar_net[2].bias.fill_(100.0)
    assert q(torch.zeros(2, 1))[1].max().item() == 8.0


def test_fit_variational_improves_likelihood_only_for_q():
    torch.manual_seed(0)
    zv = torch.randn(64, 2)
    zi = (2 * zv + 0.1 * torch.randn(64, 2)).requires_grad_()
    q = VariationalNet(2, 16)
    before = q.log_prob(zi, zv).mean().item()
    last = fit_variational(q, zi, zv, 200, torch.optim.Adam(q.parameters(), lr=1e-2))
    after = q.log_prob(zi, zv).mean().item()
    assert after > before and last > before
    assert zi.grad is None


def test_grl_forward_and_backward():
    z = torch.randn(3, 4, requires_grad=True)
    w = torch.randn(3, 4)
    out = grl(z, 0.7)
    assert torch.equal(out, z)
    (out * w).sum().backward()
    assert torch.equal(z.grad, -0.7 * w)


def test_grl_finite_differences():
    theta = torch.tensor([0.3, -0.8, 1.2], requires_grad=True)
    x = torch.tensor([0.5, 1.5, -2.0])

    def f(t):
        return torch.tanh((t * x).sum()) ** 2 + t[0] * t[2]

    f(grl(theta)).backward()
    for i in range(3):
        e = torch.zeros(3)
        e[i] = 1e-6
        fd = (f(theta.detach() + e) - f(theta.detach() - e)).item() / 2e-6
        assert theta.grad[i].item() == pytest.approx(-fd, rel=1e-6)


def _pair(B=3, T=2, N=4, D=5):
    return ReprPair(torch.randn(B, T, N, D, requires_grad=True), torch.randn(B, T, N, D, requires_grad=True))


def test_ssl_losses_at_uniform_logits():
    heads = SslHeads(5, 6, 4, 2)
    for mod in (heads.location, heads.temporal):
        with torch.no_grad():
            mod[2].weight.zero_()
            mod[2].bias.zero_()
    z = torch.randn(3, 4, 5)
    losses = ssl_losses(heads, z, torch.tensor([0, 47, 20]), torch.zeros(3, 4, 2, dtype=torch.long))
    assert losses["sl"].item() == pytest.approx(math.log(4))
    assert losses["ti"].item() == pytest.approx(math.log(48))


def test_ssl_load_loss_oracle():
    heads = SslHeads(2, 2, 3, 2)
    with torch.no_grad():
        heads.load[2].weight.zero_()
        heads.load[2].bias.copy_(torch.tensor([1.0, 2.0]))
    load = torch.tensor([[[0, 2], [3, 2], [1, 5]]])
    losses = ssl_losses(heads, torch.randn(1, 3, 2), torch.tensor([1]), load)
    expected = ((1 + 0) + (4 + 0) + (0 + 9)) / 3
    assert losses["tl"].item() == pytest.approx(expected)


def test_ssl_label_errors():
    heads = SslHeads(2, 2, 3, 1)
    z = torch.randn(1, 3, 2)
    with pytest.raises(LabelError):
        ssl_losses(heads, z, torch.tensor([48]), torch.zeros(1, 3, 1, dtype=torch.long))
    with pytest.raises(LabelError):
        ssl_losses(heads, z, torch.tensor([0]), torch.full((1, 3, 1), 6))


def test_adversarial_gradient_signs():
    torch.manual_seed(3)
    pooler, heads = NodePooler(5, 2), SslHeads(5, 6, 4, 1)
    pair = _pair()
    t, load = torch.tensor([1, 2, 30]), torch.randint(0, 6, (3, 4, 1))
    rev, terms = adversarial_loss(pooler, heads, pair, t, load, eta=1.0, reverse=True)
    g_rev = torch.autograd.grad(rev, [pair.z_i, pair.z_v, *heads.parameters()])
    plain, terms2 = adversarial_loss(pooler, heads, pair, t, load, reverse=False)
    g_plain = torch.autograd.grad(plain, [pair.z_i, pair.z_v, *heads.parameters()])
    torch.testing.assert_close(rev, plain)
    torch.testing.assert_close(terms, terms2)
    torch.testing.assert_close(g_rev[0], -g_plain[0])
    for a, b in zip(g_rev[1:], g_plain[1:]):
        torch.testing.assert_close(a, b)


def test_adversarial_weights_and_dropped_tasks():
    pooler, heads = NodePooler(5, 2), SslHeads(5, 6, 4, 1)
    pair = _pair()
    t, load = torch.tensor([1, 2, 30]), torch.randint(0, 6, (3, 4, 1))
    w = torch.tensor([0.5, 1.0, 2.0, 0.1, 0.2, 3.0])
    total, terms = adversarial_loss(pooler, heads, pair, t, load, weights=w, tasks=("sl", "tl"))
    assert terms[1].item() == 0.0 and terms[4].item() == 0.0
    assert total.item() == pytest.approx((w * terms).sum().item())
    with pytest.raises(ValueError):
        ReprPair(torch.zeros(1, 2, 3, 4), torch.zeros(1, 2, 3, 5))
