import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from mddnet.layers import (
    MaskedBatchNorm,
    TokenGroupNorm,
    ensure_batched,
    init_parameters,
    masked_softmax,
    norm_param_names,
)


def test_masked_softmax_matches_plain_when_unmasked():
    scores = torch.randn(3, 5)
    out = masked_softmax(scores, torch.ones(3, 5, dtype=torch.bool))
    torch.testing.assert_close(out, torch.softmax(scores, dim=-1))
    torch.testing.assert_close(masked_softmax(scores, None), torch.softmax(scores, dim=-1))


def test_masked_softmax_zeroes_masked_positions():
    scores = torch.randn(2, 4)
    mask = torch.tensor([[True, True, False, True], [False, True, True, True]])
    out = masked_softmax(scores, mask)
    assert (out[~mask] == 0).all()
    torch.testing.assert_close(out.sum(-1), torch.ones(2))


def test_masked_softmax_all_masked_row_is_zero():
    scores = torch.randn(2, 4)
    mask = torch.tensor([[False] * 4, [True] * 4])
    out = masked_softmax(scores, mask)
    assert (out[0] == 0).all()
    torch.testing.assert_close(out[1].sum(), torch.tensor(1.0))


def test_masked_softmax_ignores_masked_scores_entirely():
    scores = torch.tensor([[1.0, 2.0, -5.0]])
    mask = torch.tensor([[True, True, False]])
    out = masked_softmax(scores, mask)
    scores2 = scores.clone()
    scores2[0, 2] = 1e6  # huge score at a masked slot must not matter
    torch.testing.assert_close(out, masked_softmax(scores2, mask))


@settings(max_examples=30, deadline=None)
@given(
    rows=st.integers(min_value=1, max_value=4),
    cols=st.integers(min_value=1, max_value=6),
    seed=st.integers(min_value=0, max_value=1000),
)
def test_masked_softmax_row_sums_property(rows, cols, seed):
    gen = torch.Generator().manual_seed(seed)
    scores = torch.randn(rows, cols, generator=gen)
    mask = torch.rand(rows, cols, generator=gen) > 0.4
    out = masked_softmax(scores, mask)
    sums = out.sum(-1)
    expect = mask.any(-1).float()
    torch.testing.assert_close(sums, expect, atol=1e-6, rtol=0)


def test_masked_batchnorm_train_stats_use_real_rows_only():
    torch.manual_seed(0)
    bn = MaskedBatchNorm(3)
    bn.train()
    x = torch.randn(2, 4, 3)
    mask = torch.tensor([[True, True, True, False], [True, True, False, False]])
    out = bn(x, mask)
    real = x[mask]                      # (5, 3)
    mean = real.mean(0)
    var = real.var(0, unbiased=False)
    expect = (x - mean) / torch.sqrt(var + bn.eps) * bn.weight + bn.bias
    torch.testing.assert_close(out, expect)
    # padded content must not change normalization of the real rows
    x2 = x.clone()
    x2[~mask] = 123.0
    torch.testing.assert_close(bn(x2, mask)[mask], out[mask])


def test_masked_batchnorm_eval_is_batch_independent():
    torch.manual_seed(1)
    bn = MaskedBatchNorm(2)
    bn.train()
    for _ in range(3):
        bn(torch.randn(4, 5, 2))
    bn.eval()
    x = torch.randn(6, 5, 2)
    full = bn(x)
    parts = torch.cat([bn(x[:2]), bn(x[2:])])
    torch.testing.assert_close(full, parts)


def test_token_groupnorm_matches_torch_reference():
    torch.manual_seed(2)
    gn = TokenGroupNorm(6, groups=3)
    with torch.no_grad():
        gn.weight.copy_(torch.randn(6))
        gn.bias.copy_(torch.randn(6))
    x = torch.randn(4, 5, 6)
    out = gn(x)
    ref = F.group_norm(x.reshape(-1, 6), 3, gn.weight, gn.bias, gn.eps).reshape(4, 5, 6)
    torch.testing.assert_close(out, ref, atol=1e-5, rtol=1e-5)


def test_norm_param_names_finds_all_norm_layers():
    model = nn.Sequential(nn.Linear(3, 3), nn.LayerNorm(3))
    model.add_module("bn", MaskedBatchNorm(3))
    names = norm_param_names(model)
    assert names == {"1.weight", "1.bias", "bn.weight", "bn.bias"}


def test_init_is_seed_deterministic():
    a = nn.Sequential(nn.Linear(4, 5), nn.LayerNorm(5))
    b = nn.Sequential(nn.Linear(4, 5), nn.LayerNorm(5))
    init_parameters(a, 9)
    init_parameters(b, 9)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    init_parameters(b, 10)
    assert not all(torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))


def test_init_ranges():
    lin = nn.Linear(8, 8)
    init_parameters(lin, 0)
    bound = np.sqrt(6 / 16)
    assert lin.weight.abs().max() <= bound
    assert (lin.bias == 0).all()


def test_ensure_batched():
    x = torch.zeros(3, 4)
    (xb,), squeezed = ensure_batched(x)
    assert squeezed and xb.shape == (1, 3, 4)
    (xb2, m2), squeezed2 = ensure_batched(torch.zeros(2, 3, 4), None)
    assert not squeezed2 and m2 is None and xb2.shape == (2, 3, 4)
