import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from mddnet.errors import ShapeMismatch, UnknownMode
from mddnet.fusion import (
    BaselineFusion,
    CrossAttention,
    JointFusion,
    MutualBlock,
    MutualTransformerFusion,
    temporal_avg_pool,
)


def reseed(module, seed=0, scale=0.5):
    torch.manual_seed(seed)
    module.double()
    for p in module.parameters():
        p.data = torch.randn_like(p) * scale
    return module


def naive_cross(xq, xkv, w_q, w_k, w_v, kv_mask=None):
    """Row-by-row scaled dot-product attention over the other stream."""
    w_q, w_k, w_v = w_q.detach(), w_k.detach(), w_v.detach()
    q, k, v = xq @ w_q, xkv @ w_k, xkv @ w_v
    out = torch.zeros(xq.shape[0], v.shape[1], dtype=xq.dtype)
    for i in range(xq.shape[0]):
        scores = torch.tensor(
            [float(q[i] @ k[j]) / math.sqrt(w_q.shape[0]) for j in range(xkv.shape[0])],
            dtype=xq.dtype,
        )
        if kv_mask is not None:
            scores[~kv_mask] = -torch.inf
        weights = torch.softmax(scores, dim=0)
        for j in range(xkv.shape[0]):
            out[i] += weights[j] * v[j]
    return out


def test_cross_attention_matches_naive_loops():
    attn = reseed(CrossAttention(6))
    xq = torch.randn(4, 6, dtype=torch.float64)
    xkv = torch.randn(7, 6, dtype=torch.float64)
    mine = attn(xq, xkv)
    assert (mine - naive_cross(xq, xkv, attn.w_q, attn.w_k, attn.w_v)).abs().max() < 1e-6


def test_cross_attention_ignores_masked_keys():
    attn = reseed(CrossAttention(6), seed=1)
    xq = torch.randn(3, 6, dtype=torch.float64)
    xkv = torch.randn(5, 6, dtype=torch.float64)
    kv_mask = torch.tensor([True, True, False, True, False])
    mine = attn(xq, xkv, kv_mask)
    assert (mine - naive_cross(xq, xkv, attn.w_q, attn.w_k, attn.w_v, kv_mask)).abs().max() < 1e-6
    # equivalently: dropping the masked keys outright gives the same answer
    assert (mine - attn(xq, xkv[kv_mask])).abs().max() < 1e-10


def _ln(x, ln):
    return F.layer_norm(x, x.shape[-1:], ln.weight, ln.bias, ln.eps)


def test_mutual_block_composition():
    block = reseed(MutualBlock(6, 12), seed=2)
    xq = torch.randn(4, 6, dtype=torch.float64)
    xkv = torch.randn(5, 6, dtype=torch.float64)
    cross = naive_cross(xq, xkv, block.cross.w_q, block.cross.w_k, block.cross.w_v)
    inner = _ln(xq + cross, block.ln_attn)
    expect = _ln(xq + F.gelu(inner @ block.beta) + block.b, block.ln_out) @ block.w_z
    assert (block(xq, xkv) - expect).abs().max() < 1e-6


def test_mutual_block_activation_variants():
    for name, fn in [("relu", F.relu), ("tanh", torch.tanh)]:
        block = reseed(MutualBlock(6, 12, activation=name), seed=3)
        xq = torch.randn(4, 6, dtype=torch.float64)
        xkv = torch.randn(4, 6, dtype=torch.float64)
        cross = naive_cross(xq, xkv, block.cross.w_q, block.cross.w_k, block.cross.w_v)
        inner = _ln(xq + cross, block.ln_attn)
        expect = _ln(xq + fn(inner @ block.beta) + block.b, block.ln_out) @ block.w_z
        assert (block(xq, xkv) - expect).abs().max() < 1e-6
    with pytest.raises(UnknownMode):
        MutualBlock(6, 12, activation="swish")


def test_mutual_block_rejects_width_mismatch():
    block = MutualBlock(6, 12)
    with pytest.raises(ShapeMismatch):
        block(torch.randn(4, 6), torch.randn(4, 5))


def naive_multihead(x, w_q, w_k, w_v, w_o, heads, mask=None):
    t, dim = x.shape
    d_h = dim // heads
    q, k, v = x @ w_q, x @ w_k, x @ w_v
    merged = torch.zeros(t, dim, dtype=x.dtype)
    for h in range(heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(d_h)
        if mask is not None:
            scores[:, ~mask] = -torch.inf
        merged[:, sl] = torch.softmax(scores, dim=-1) @ v[:, sl]
    return merged @ w_o


def test_joint_fusion_composition():
    joint = reseed(JointFusion(6, 12, heads=2), seed=4)
    x = torch.randn(5, 6, dtype=torch.float64)
    attn = naive_multihead(x, joint.w_q, joint.w_k, joint.w_v, joint.w_o, heads=2)
    hidden = _ln(x + attn, joint.ln1)
    expect = _ln(hidden + joint.ffn(hidden), joint.ln2) @ joint.w_z
    assert (joint(x) - expect).abs().max() < 1e-6


def test_joint_fusion_heads_must_divide_dim():
    with pytest.raises(ValueError):
        JointFusion(6, 12, heads=4)


def naive_pool(x, window, mask=None):
    t = x.shape[0]
    half = (window - 1) // 2
    m = mask if mask is not None else torch.ones(t, dtype=torch.bool)
    out = torch.zeros_like(x)
    for i in range(t):
        members = [x[j] for j in range(i - half, i - half + window) if 0 <= j < t and m[j]]
        if members:
            out[i] = torch.stack(members).sum(0) / len(members)
    return out


def test_temporal_avg_pool_matches_naive():
    x = torch.randn(7, 3, dtype=torch.float64)
    for window in (2, 3, 4, 5):
        assert (temporal_avg_pool(x, window) - naive_pool(x, window)).abs().max() < 1e-12


def test_temporal_avg_pool_respects_mask():
    x = torch.randn(6, 3, dtype=torch.float64)
    mask = torch.tensor([True, True, False, True, True, False])
    got = temporal_avg_pool(x, 3, mask)
    assert (got - naive_pool(x, 3, mask)).abs().max() < 1e-12


def test_pool_window_one_is_identity():
    x = torch.randn(4, 3)
    assert temporal_avg_pool(x, 1) is x
    with pytest.raises(ShapeMismatch):
        temporal_avg_pool(x, 0)


@given(window=st.integers(1, 6), t=st.integers(1, 9), c=st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_pool_keeps_constant_rows_constant(window, t, c):
    x = torch.full((t, 4), c, dtype=torch.float64)
    got = temporal_avg_pool(x, window)
    assert (got - c).abs().max() < 1e-9


def make_fusion(d_a=5, d_v=7, seed=0, **kw):
    return reseed(MutualTransformerFusion(d_a, d_v, **kw), seed=seed, scale=0.2)


def test_fused_streams_have_expected_shapes():
    fuse = make_fusion()
    xa = torch.randn(2, 6, 5, dtype=torch.float64)
    xv = torch.randn(2, 6, 7, dtype=torch.float64)
    out = fuse(xa, xv)
    d_z = 2 * (5 + 7)
    assert out.mc_av.shape == (2, 6, d_z)
    assert out.mc_va.shape == (2, 6, d_z)
    assert out.mc_fav.shape == (2, 12, d_z)
    assert out.z.shape == (2, 24, d_z)
    assert out.token_mask is None


def test_fused_z_is_pooled_stream_concat():
    fuse = make_fusion(seed=5)
    xa = torch.randn(1, 6, 5, dtype=torch.float64)
    xv = torch.randn(1, 6, 7, dtype=torch.float64)
    out = fuse(xa, xv)
    n = xa.shape[1]
    streams = (out.mc_av, out.mc_va, out.mc_fav[:, :n], out.mc_fav[:, n:])
    expect = torch.cat([temporal_avg_pool(s, fuse.pool_window) for s in streams], dim=1)
    assert (out.z - expect).abs().max() < 1e-12


def test_masked_fusion_equals_truncated():
    fuse = make_fusion(seed=6)
    t, real_a, real_v = 8, 5, 7
    xa = torch.randn(t, 5, dtype=torch.float64)
    xv = torch.randn(t, 7, dtype=torch.float64)
    mask_a = torch.arange(t) < real_a
    mask_v = torch.arange(t) < real_v
    padded = fuse(xa, xv, mask_a, mask_v)
    trunc = fuse(xa[:real_a], xv[:real_v])
    assert (padded.mc_av[:real_a] - trunc.mc_av).abs().max() < 1e-8
    assert (padded.mc_va[:real_v] - trunc.mc_va).abs().max() < 1e-8
    assert (padded.mc_fav[:real_a] - trunc.mc_fav[:real_a]).abs().max() < 1e-8
    assert (padded.mc_fav[t:t + real_v] - trunc.mc_fav[real_a:]).abs().max() < 1e-8


def test_masked_fusion_zeroes_padded_tokens():
    fuse = make_fusion(seed=7)
    t = 6
    xa = torch.randn(t, 5, dtype=torch.float64)
    xv = torch.randn(t, 7, dtype=torch.float64)
    mask_a = torch.arange(t) < 4
    mask_v = torch.arange(t) < 5
    out = fuse(xa, xv, mask_a, mask_v)
    assert out.token_mask.shape == (4 * t,)
    expect_mask = torch.cat([mask_a, mask_v, mask_a, mask_v])
    assert torch.equal(out.token_mask, expect_mask)
    assert out.z[~expect_mask].abs().max() == 0.0


def test_baseline_add_and_multiply_identities():
    xa = torch.randn(2, 4, 5, dtype=torch.float64)
    xv = torch.randn(2, 4, 7, dtype=torch.float64)
    for mode, combine in [("add", torch.add), ("multiply", torch.mul)]:
        fuse = reseed(BaselineFusion(5, 7, mode), seed=8)
        out = fuse(xa, xv)
        expect = combine(xa @ fuse.proj_a, xv @ fuse.proj_v)
        assert (out.z - expect).abs().max() < 1e-12
        assert out.z.shape == (2, 4, 24)


def test_baseline_concat_with_stacked_identity_reduces_to_add():
    fuse = reseed(BaselineFusion(5, 7, "concat"), seed=9)
    eye = torch.eye(24, dtype=torch.float64)
    fuse.w_c.data = torch.cat([eye, eye], dim=0)
    xa = torch.randn(3, 5, dtype=torch.float64)
    xv = torch.randn(3, 7, dtype=torch.float64)
    out = fuse(xa, xv)
    expect = xa @ fuse.proj_a + xv @ fuse.proj_v
    assert (out.z - expect).abs().max() < 1e-12


def test_baseline_mask_intersects_modalities():
    fuse = reseed(BaselineFusion(5, 7, "add"), seed=10)
    xa = torch.randn(4, 5, dtype=torch.float64)
    xv = torch.randn(4, 7, dtype=torch.float64)
    mask_a = torch.tensor([True, True, True, False])
    mask_v = torch.tensor([True, False, True, True])
    out = fuse(xa, xv, mask_a, mask_v)
    assert torch.equal(out.token_mask, mask_a & mask_v)
    assert out.z[~(mask_a & mask_v)].abs().max() == 0.0


def test_baseline_rejects_unknown_mode_and_length_mismatch():
    with pytest.raises(UnknownMode):
        BaselineFusion(5, 7, "bilinear")
    fuse = BaselineFusion(5, 7, "add")
    with pytest.raises(ShapeMismatch):
        fuse(torch.randn(4, 5), torch.randn(3, 7))


def test_unbatched_inputs_round_trip():
    fuse = make_fusion(seed=11)
    xa = torch.randn(6, 5, dtype=torch.float64)
    xv = torch.randn(6, 7, dtype=torch.float64)
    single = fuse(xa, xv)
    batched = fuse(xa.unsqueeze(0), xv.unsqueeze(0))
    assert single.z.ndim == 2
    assert (single.z - batched.z.squeeze(0)).abs().max() == 0.0
