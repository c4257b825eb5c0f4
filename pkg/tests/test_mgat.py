import numpy as np
import pytest
import torch

from odgen.core import City, ODNetwork, TransportGraphSet
from odgen.data import SynthConfig, synth_city
from odgen.exceptions import DataFormatError
from odgen.mgat import EncoderConfig, GatLayer, MultiViewEncoder, city_tensors, encode


def reference_gat(h, adj, weight, attn, activation, slope=0.2):
    """Naive dense reference: explicit neighbor loops, [Wh_i || Wh_j] concat,
    -inf masking before the softmax, one head at a time."""

    def leaky(v):
        return v if v > 0 else slope * v

    def elu(v):
        return np.where(v > 0, v, np.expm1(v))

    n = h.shape[0]
    heads, _, head_dim = weight.shape
    out = np.zeros((n, heads * head_dim))
    for k in range(heads):
        wh = h @ weight[k]
        for i in range(n):
            scores = np.full(n, -np.inf)
            for j in range(n):
                if adj[i, j]:
                    scores[j] = leaky(float(attn[k] @ np.concatenate([wh[i], wh[j]])))
            exp = np.exp(scores - scores[adj[i]].max())
            exp[~adj[i]] = 0.0
            alpha = exp / exp.sum()
            agg = np.zeros(head_dim)
            for j in range(n):
                if adj[i, j]:
                    agg += alpha[j] * wh[j]
            out[i, k * head_dim : (k + 1) * head_dim] = elu(agg) if activation else agg
    return out


def random_adj(rng, n):
    adj = rng.random((n, n)) < 0.4
    adj = adj | adj.T
    np.fill_diagonal(adj, True)
    return adj


def small_city(n_regions=9, attr_dim=60, seed=0):
    return synth_city(SynthConfig(n_regions=n_regions, attr_dim=attr_dim, seed=seed))


def test_matches_dense_reference_on_random_instances():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n, f, heads, head_dim = 5, 6, 3, 4
        h = rng.normal(size=(n, f))
        adj = random_adj(rng, n)
        activation = trial % 2 == 0
        layer = GatLayer(f, head_dim, heads, activation=activation).double()
        expected = reference_gat(
            h,
            adj,
            layer.weight.detach().numpy(),
            layer.attn.detach().numpy(),
            activation,
        )
        got = layer(torch.as_tensor(h), torch.as_tensor(adj)).detach().numpy()
        np.testing.assert_allclose(got, expected, atol=1e-6)


def test_identical_rows_give_uniform_attention():
    n, f = 6, 4
    h = torch.ones(n, f, dtype=torch.float64)
    rng = np.random.default_rng(3)
    adj = torch.as_tensor(random_adj(rng, n))
    layer = GatLayer(f, 3, 2).double()
    _, alpha = layer(h, adj, return_attention=True)
    alpha = alpha.detach().numpy()
    for k in range(2):
        for i in range(n):
            neigh = adj[i].numpy()
            np.testing.assert_allclose(alpha[k, i][neigh], 1.0 / neigh.sum(), atol=1e-12)
            np.testing.assert_allclose(alpha[k, i][~neigh], 0.0, atol=0)


def test_single_node_self_loop():
    h = torch.tensor([[0.5, -1.0, 2.0]], dtype=torch.float64)
    adj = torch.ones(1, 1, dtype=torch.bool)
    layer = GatLayer(3, 4, 2).double()
    out = layer(h, adj)
    wh = torch.einsum("nf,kfd->knd", h, layer.weight)
    expected = torch.nn.functional.elu(wh).permute(1, 0, 2).reshape(1, 8)
    assert torch.allclose(out, expected, atol=1e-12)


def test_empty_neighbor_set_rejected():
    adj = torch.eye(3, dtype=torch.bool)
    adj[1, 1] = False
    layer = GatLayer(2, 2, 1)
    with pytest.raises(DataFormatError, match=r"empty neighbor set.*\[1\]"):
        layer(torch.randn(3, 2), adj)


def test_attention_rows_sum_to_one_every_layer():
    city = small_city()
    feats, adjs = city_tensors(city, dtype=torch.float64)
    cfg = EncoderConfig(attr_dim=city.attr_dim, noise_dim=8)
    encoder = MultiViewEncoder(cfg).double()
    noise = torch.randn(city.n_regions, 8, dtype=torch.float64)
    for mode in encoder.MODES:
        h = torch.cat([feats, noise], dim=1)
        for layer in encoder.stacks[mode]:
            h, alpha = layer(h, adjs[mode], return_attention=True)
            sums = alpha.sum(dim=-1)
            np.testing.assert_allclose(sums.detach().numpy(), 1.0, atol=1e-6)


def test_encode_output_shape_matches_defaults():
    city = small_city(attr_dim=60)
    cfg = EncoderConfig(attr_dim=60)  # defaults: noise 60, embed 64, heads 8, layers 3
    assert cfg.head_dim == 8
    encoder = MultiViewEncoder(cfg)
    noise = torch.randn(city.n_regions, 60)
    out = encode(city, noise, encoder)
    assert out.shape == (city.n_regions, 64)


def test_zero_fusion_gives_zero_embeddings():
    city = small_city(attr_dim=12)
    cfg = EncoderConfig(attr_dim=12, noise_dim=4, embed_dim=16, heads=4, layers=2)
    encoder = MultiViewEncoder(cfg)
    with torch.no_grad():
        encoder.fuse.weight.zero_()
    out = encode(city, torch.randn(city.n_regions, 4), encoder)
    assert torch.all(out == 0)


def permute_city(city: City, perm: np.ndarray) -> City:
    regions = [city.regions[k] for k in perm]
    adjs = {m: a[np.ix_(perm, perm)] for m, a in city.transport.as_dict().items()}
    od = None if city.od is None else ODNetwork(flows=city.od.flows[np.ix_(perm, perm)])
    return City(regions=regions, transport=TransportGraphSet(**adjs), od=od)


def test_permutation_equivariance():
    city = small_city(n_regions=12, attr_dim=10)
    cfg = EncoderConfig(attr_dim=10, noise_dim=6, embed_dim=32, heads=4, layers=3)
    encoder = MultiViewEncoder(cfg).double()
    noise = torch.randn(city.n_regions, 6, dtype=torch.float64)
    rng = np.random.default_rng(0)
    perm = rng.permutation(city.n_regions)
    base = encode(city, noise, encoder).detach().numpy()
    permuted = encode(permute_city(city, perm), noise[perm], encoder).detach().numpy()
    np.testing.assert_allclose(permuted, base[perm], atol=1e-9)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    n, f, heads, head_dim = 4, 3, 2, 2
    h = torch.as_tensor(rng.normal(size=(n, f)))
    adj = torch.as_tensor(random_adj(rng, n))
    weights = torch.as_tensor(rng.normal(size=(n, heads * head_dim)))
    layer = GatLayer(f, head_dim, heads).double()

    loss = (layer(h, adj) * weights).sum()
    loss.backward()

    eps = 1e-4
    for name, param in (("weight", layer.weight), ("attn", layer.attn)):
        grad = param.grad.detach().numpy()
        flat_indices = [0, param.numel() // 2, param.numel() - 1]
        for flat in flat_indices:
            idx = np.unravel_index(flat, param.shape)
            with torch.no_grad():
                param[idx] += eps
                up = (layer(h, adj) * weights).sum().item()
                param[idx] -= 2 * eps
                down = (layer(h, adj) * weights).sum().item()
                param[idx] += eps
            fd = (up - down) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-10), f"{name}[{idx}]"


def test_encode_validates_dimensions():
    city = small_city(attr_dim=12)
    cfg = EncoderConfig(attr_dim=12, noise_dim=4, embed_dim=16, heads=4, layers=1)
    encoder = MultiViewEncoder(cfg)
    with pytest.raises(DataFormatError, match="noise"):
        encode(city, torch.randn(city.n_regions, 5), encoder)
    other = small_city(attr_dim=7)
    with pytest.raises(DataFormatError):
        encode(other, torch.randn(other.n_regions, 4), encoder)
