import torch

from mddnet.afem import AcousticExtractor


def rand_extractor(d_in=5, d_out=6, window=3, seed=0):
    torch.manual_seed(seed)
    ext = AcousticExtractor(d_in=d_in, d_out=d_out, window=window).double()
    for p in ext.parameters():
        p.data = torch.randn_like(p) * 0.7
    return ext


def naive_content(ext, x):
    """Global attention where the keys are softmaxed over the time axis per
    channel and queries multiply the aggregated context."""
    q, k, v = x @ ext.w_q, x @ ext.w_k, x @ ext.w_v
    rho = torch.softmax(k, dim=0)
    return q @ (rho.T @ v)


def naive_positional(ext, x):
    """Per-position scores against learned offset embeddings, applied to the
    value vectors of the surrounding window (missing neighbors contribute 0)."""
    t = x.shape[0]
    window = ext.rel_embed.shape[0]
    half = (window - 1) // 2
    q, v = x @ ext.w_q, x @ ext.w_v
    scores = q @ ext.rel_embed.T
    out = torch.zeros(t, v.shape[1], dtype=x.dtype)
    for i in range(t):
        for n in range(window):
            j = i + n - half
            if 0 <= j < t:
                out[i] += scores[i, n] * v[j]
    return out


def test_content_attention_matches_naive_loops():
    ext = rand_extractor()
    x = torch.randn(4, 5, dtype=torch.float64)
    mine = ext.content_attention(x.unsqueeze(0), None).squeeze(0)
    assert (mine - naive_content(ext, x)).abs().max() < 1e-6


def test_positional_attention_matches_naive_loops():
    ext = rand_extractor(window=5)
    x = torch.randn(5, 5, dtype=torch.float64)
    mine = ext.positional_attention(x.unsqueeze(0), None).squeeze(0)
    assert (mine - naive_positional(ext, x)).abs().max() < 1e-6


def test_forward_is_content_plus_normalized_positional():
    ext = rand_extractor()
    ext.train()
    x = torch.randn(1, 6, 5, dtype=torch.float64)
    out = ext(x)
    content = ext.content_attention(x, None)
    positional = ext.positional_attention(x, None)
    expect = content + ext.bn(positional @ ext.w_o, None)
    assert (out - expect).abs().max() < 1e-10


def test_masked_rows_do_not_influence_real_rows():
    ext = rand_extractor()
    ext.train()
    x = torch.randn(1, 6, 5, dtype=torch.float64)
    full = ext(x[:, :4].clone())
    padded = x.clone()
    padded[0, 4:] = 42.0  # junk that a correct mask must hide
    mask = torch.tensor([[True] * 4 + [False] * 2])
    masked_out = ext(padded, mask)
    assert (masked_out[0, :4] - full[0]).abs().max() < 1e-8
    assert (masked_out[0, 4:] == 0).all()


def test_output_shape_at_published_dims():
    ext = AcousticExtractor(d_in=25, d_out=71, window=7)
    out = ext(torch.randn(1, 256, 25))
    assert out.shape == (1, 256, 71)


def test_accepts_unbatched_input():
    ext = rand_extractor()
    x = torch.randn(4, 5, dtype=torch.float64)
    out2 = ext(x)
    out3 = ext(x.unsqueeze(0)).squeeze(0)
    assert out2.shape == (4, 6)
    assert (out2 - out3).abs().max() < 1e-12


def test_gradients_flow_to_all_parameters():
    ext = rand_extractor()
    x = torch.randn(2, 5, 5, dtype=torch.float64)
    ext(x).sum().backward()
    for name, p in ext.named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name
