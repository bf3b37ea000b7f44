import torch
import torch.nn.functional as F

from mddnet.vfem import HmhsaBlock, PatchEmbed, VisualExtractor, downsample


def rand_params(module, seed=0, scale=0.5):
    torch.manual_seed(seed)
    for p in module.parameters():
        p.data = torch.randn_like(p) * scale
    return module


def naive_hmhsa_faithful(blk, x, heads):
    """Bare composition: per-head softmax(QK^T/sqrt(d_h))V, projected with a
    residual to the input, then the MLP with a second residual — no layer
    norms anywhere."""
    d = x.shape[1]
    d_h = d // heads
    q, k, v = x @ blk.w_q, x @ blk.w_k, x @ blk.w_v
    mv = torch.zeros_like(x)
    for h in range(heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        att = torch.softmax(q[:, sl] @ k[:, sl].T / d_h ** 0.5, dim=-1)
        mv[:, sl] = att @ v[:, sl]
    mid = mv @ blk.w_p + x
    return blk.mlp(mid) + mid


def test_patch_embed_matches_manual_composition():
    pe = rand_params(PatchEmbed(4, 6, groups=2).double(), seed=1)
    x = torch.randn(5, 4, dtype=torch.float64)
    expect = F.silu(pe.norm(x @ pe.w1)) @ pe.w2
    mine = pe(x.unsqueeze(0)).squeeze(0)
    assert (mine - expect).abs().max() < 1e-10


def test_hmhsa_block_matches_naive_loops_when_faithful():
    blk = rand_params(HmhsaBlock(dim=6, heads=2, mlp_ratio=2, faithful=True).double(), seed=2)
    x = torch.randn(5, 6, dtype=torch.float64)
    mine = blk(x.unsqueeze(0)).squeeze(0)
    assert (mine - naive_hmhsa_faithful(blk, x, heads=2)).abs().max() < 1e-6


def test_hmhsa_block_default_adds_layer_norms():
    blk = rand_params(HmhsaBlock(dim=6, heads=1, mlp_ratio=2).double(), seed=3)
    x = torch.randn(4, 6, dtype=torch.float64).unsqueeze(0)
    mid = blk.attention(blk.ln_attn(x), None) @ blk.w_p + x
    expect = blk.mlp(blk.ln_mlp(mid)) + mid
    assert (blk(x) - expect).abs().max() < 1e-10


def test_hmhsa_masked_rows_do_not_influence_real_rows():
    blk = rand_params(HmhsaBlock(dim=6, heads=2, mlp_ratio=2).double(), seed=4)
    x = torch.randn(1, 6, 6, dtype=torch.float64)
    full = blk(x[:, :4].clone())
    padded = x.clone()
    padded[0, 4:] = -7.0
    mask = torch.tensor([[True] * 4 + [False] * 2])
    out = blk(padded, mask)
    assert (out[0, :4] - full[0]).abs().max() < 1e-8


def test_downsample_averages_with_mask_weights():
    x = torch.arange(10, dtype=torch.float64).reshape(1, 5, 2)
    mask = torch.tensor([[True, True, True, True, False]])
    out, new_mask = downsample(x, 2, mask)
    assert out.shape == (1, 3, 2)
    assert out[0, 0].tolist() == [1.0, 2.0]   # mean of rows 0,1
    assert out[0, 1].tolist() == [5.0, 6.0]   # mean of rows 2,3
    assert out[0, 2].tolist() == [0.0, 0.0]   # fully padded window
    assert new_mask[0].tolist() == [True, True, False]


def test_downsample_partial_window_uses_real_members_only():
    x = torch.arange(6, dtype=torch.float64).reshape(1, 3, 2)
    out, new_mask = downsample(x, 2, None)
    assert out.shape == (1, 2, 2)
    assert out[0, 1].tolist() == [4.0, 5.0]   # final window holds one row
    assert new_mask is None


def test_downsample_stride_one_is_identity():
    x = torch.randn(2, 5, 3)
    out, mask = downsample(x, 1, None)
    assert torch.equal(out, x)


def test_extractor_shape_at_published_dims():
    ext = VisualExtractor(d_in=136, d_out=139, depths=(1, 1), strides=(1, 1), heads=1)
    out = ext(torch.randn(1, 256, 136))
    assert out.shape == (1, 256, 139)


def test_extractor_strides_shorten_sequence_and_mask():
    ext = VisualExtractor(d_in=8, d_out=6, depths=(1, 1), strides=(2, 2), heads=2)
    x = torch.randn(2, 12, 8)
    mask = torch.ones(2, 12, dtype=torch.bool)
    mask[1, 9:] = False
    out, new_mask = ext.forward_with_mask(x, mask)
    assert out.shape == (2, 3, 6)
    assert new_mask.shape == (2, 3)
    assert new_mask[0].all()


def test_extractor_zeroes_padded_rows():
    ext = VisualExtractor(d_in=8, d_out=6, depths=(1,), strides=(1,), heads=1)
    x = torch.randn(1, 6, 8)
    mask = torch.tensor([[True, True, True, False, False, False]])
    out, new_mask = ext.forward_with_mask(x, mask)
    assert (out[0, 3:] == 0).all()
    assert new_mask[0].tolist() == [True, True, True, False, False, False]


def test_gradients_flow_to_all_parameters():
    ext = VisualExtractor(d_in=5, d_out=6, depths=(1, 1), strides=(1, 1), heads=2).double()
    x = torch.randn(2, 6, 5, dtype=torch.float64)
    ext(x).sum().backward()
    for name, p in ext.named_parameters():
        assert p.grad is not None and p.grad.abs().sum() > 0, name
