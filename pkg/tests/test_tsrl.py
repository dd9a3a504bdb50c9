import numpy as np
import pytest
import torch

from steve.errors import ShapeError, ValidationError
from steve.graph import grid_adjacency
from steve.tsrl import TSRL, GraphConv, TemporalConv, TsrlConfig, normalized_adjacency


def test_temporal_conv_hand_oracle():
    conv = TemporalConv(1, 1, 3, gated=False)
    with torch.no_grad():
        conv.proj.weight.copy_(torch.tensor([[1.0, 0.0, -1.0]]))
        conv.proj.bias.zero_()
    x = torch.arange(5.0).reshape(1, 5, 1, 1)
    out = conv(x)
    assert out.shape == (1, 3, 1, 1)
    assert out.flatten().tolist() == [-2.0, -2.0, -2.0]


def test_glu_gate():
    conv = TemporalConv(1, 1, 1)
    with torch.no_grad():
        conv.proj.weight.copy_(torch.tensor([[2.0], [1.0]]))
        conv.proj.bias.zero_()
    x = torch.tensor([0.5, -1.0, 3.0]).reshape(1, 3, 1, 1)
    expected = 2 * x * torch.sigmoid(x)
    torch.testing.assert_close(conv(x), expected)


def test_temporal_conv_matches_conv1d():
    torch.manual_seed(0)
    conv = TemporalConv(3, 4, 3, gated=False).double()
    x = torch.randn(2, 7, 5, 3, dtype=torch.float64)
    # same kernel as a Conv1d over time, per node
    w = conv.proj.weight.reshape(4, 3, 3).permute(0, 2, 1)  # [c_out, c_in, k]
    ref = torch.nn.functional.conv1d(x.permute(0, 2, 3, 1).reshape(10, 3, 7), w, conv.proj.bias)
    ref = ref.reshape(2, 5, 4, 5).permute(0, 3, 1, 2)
    torch.testing.assert_close(conv(x), ref)


def test_normalized_adjacency():
    adj = np.array([[0, 1], [1, 0]])
    np.testing.assert_allclose(normalized_adjacency(adj).numpy(), [[0.5, 0.5], [0.5, 0.5]])
    a = normalized_adjacency(grid_adjacency(3, 3)).numpy()
    np.testing.assert_allclose(a, a.T)
    assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-12


def test_graph_conv_oracle():
    adj = grid_adjacency(1, 3)
    gcl = GraphConv(2, 3, 2, adj, activation="linear").double()
    h = torch.randn(4, 3, 2, dtype=torch.float64)
    a = gcl.a_hat.double()
    expected = a @ h @ gcl.weights[0] + a @ a @ h @ gcl.weights[1] + gcl.bias
    torch.testing.assert_close(gcl(h), expected)
    relu = GraphConv(2, 3, 2, adj)
    relu.load_state_dict(gcl.float().state_dict())
    assert (relu(h.float()) >= 0).all()


def test_graph_conv_node_mismatch():
    with pytest.raises(ShapeError):
        GraphConv(1, 1, 1, grid_adjacency(2, 2))(torch.zeros(1, 5, 1))


@pytest.mark.parametrize("kt", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("layers", [1, 2, 3])
def test_shape_law(kt, layers):
    cfg = TsrlConfig(input_channels=2, hidden_dim=4, temporal_kernel=kt, layers=layers)
    T = 2 * layers * (kt - 1) + 3
    out = TSRL(cfg, grid_adjacency(2, 2))(torch.randn(2, T, 4, 2))
    assert out.shape == (2, T - 2 * layers * (kt - 1), 4, 4)
    assert cfg.output_length(T) == 3


def test_window_too_short():
    cfg = TsrlConfig(hidden_dim=4, temporal_kernel=3, layers=2)
    with pytest.raises(ShapeError):
        TSRL(cfg, grid_adjacency(2, 2))(torch.randn(1, 8, 4, 1))
    with pytest.raises(ValidationError):
        TsrlConfig(layers=0).validate()


def test_causal_window():
    """Output step t depends only on input steps t .. t + 2L(K_t-1)."""
    torch.manual_seed(0)
    cfg = TsrlConfig(hidden_dim=4, temporal_kernel=2, layers=1)
    enc = TSRL(cfg, grid_adjacency(2, 2)).double()
    x = torch.randn(1, 8, 4, 1, dtype=torch.float64, requires_grad=True)
    out = enc(x)
    # weighted sum: a plain sum over normalised features is constant
    (out[0, 0] * torch.randn_like(out[0, 0])).sum().backward()
    touched = (x.grad.abs().sum(dim=(0, 2, 3)) > 0).tolist()
    assert touched == [True, True, True] + [False] * 5


def test_node_permutation_equivariance():
    torch.manual_seed(1)
    adj = grid_adjacency(2, 3)
    perm = torch.tensor([4, 0, 5, 2, 1, 3])
    enc = TSRL(TsrlConfig(hidden_dim=6), adj).double()
    enc_p = TSRL(TsrlConfig(hidden_dim=6), adj[perm][:, perm]).double()
    enc_p.load_state_dict({k: v for k, v in enc.state_dict().items() if "a_hat" not in k}, strict=False)
    x = torch.randn(2, 11, 6, 1, dtype=torch.float64)
    torch.testing.assert_close(enc_p(x[:, :, perm]), enc(x)[:, :, perm])


def test_gradients_match_finite_differences():
    torch.manual_seed(2)
    enc = TSRL(TsrlConfig(hidden_dim=3, layers=1), grid_adjacency(1, 2)).double()
    x = torch.randn(1, 5, 2, 1, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 1, 2, 3, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda inp: (enc(inp) * w).sum(), (x,), eps=1e-6, atol=1e-6)
    for p in enc.parameters():
        p.grad = None
    enc(x).pow(2).sum().backward()
    for name, p in enc.named_parameters():
        flat = p.data.view(-1)
        for i in range(min(flat.numel(), 4)):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + 1e-6
                up = enc(x).pow(2).sum().item()
                flat[i] = old - 1e-6
                down = enc(x).pow(2).sum().item()
                flat[i] = old
            assert p.grad.view(-1)[i].item() == pytest.approx((up - down) / 2e-6, rel=1e-5, abs=1e-8), name
