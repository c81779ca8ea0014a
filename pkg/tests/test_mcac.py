"""Channel attention map and the multi-conv attention controller."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cspcn.mcac import (MultiConvAttentionController, SeparableConv2d,
                        attention_map)
from conftest import ref_conv2d, ref_softmax


def test_attention_map_two_channel_closed_form():
    # C=2, one spatial sample: scores [[1,0],[0,0]] softmax row-wise
    key = torch.tensor([[1.0], [0.0]])
    query = torch.tensor([[1.0, 0.0]])
    att = attention_map(key, query)
    e = math.e
    want = torch.tensor([[e / (e + 1.0), 1.0 / (e + 1.0)], [0.5, 0.5]])
    assert float((att - want).abs().max()) < 1e-7


def test_attention_map_zero_key_is_uniform():
    key = torch.zeros(3, 5)
    query = torch.randn(5, 3)
    att = attention_map(key, query)
    assert torch.allclose(att, torch.full((3, 3), 1.0 / 3.0))


def test_attention_map_temperature_scales_scores():
    key = torch.randn(2, 4, 6, dtype=torch.float64)
    query = torch.randn(2, 6, 4, dtype=torch.float64)
    temp = torch.tensor(2.0, dtype=torch.float64)
    got = attention_map(key, query, temp)
    want = torch.softmax((key @ query) * 2.0, dim=-1)
    assert float((got - want).abs().max()) < 1e-12


def test_attention_map_rejects_mismatched_inner_dim():
    with pytest.raises(ValueError, match="shape mismatch"):
        attention_map(torch.randn(2, 5), torch.randn(4, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_attention_map_rows_are_stochastic(seed):
    rng = np.random.default_rng(seed)
    key = torch.from_numpy(rng.standard_normal((2, 4, 9)))
    query = torch.from_numpy(rng.standard_normal((2, 9, 4)))
    att = attention_map(key, query)
    assert float((att.sum(dim=-1) - 1.0).abs().max()) < 1e-12
    assert float(att.min()) >= 0.0


def test_separable_conv_structure_and_params():
    c = 8
    sep = SeparableConv2d(c)
    assert sep.depthwise.conv.groups == c
    assert sum(p.numel() for p in sep.parameters()) == 9 * c + (c * c + c)


@torch.no_grad()
def _np_separable(sep: SeparableConv2d, x: np.ndarray) -> np.ndarray:
    dw = ref_conv2d(x, sep.depthwise.conv.weight.numpy(), groups=x.shape[1])
    pw = sep.pointwise.weight.numpy()[:, :, 0, 0]
    b = sep.pointwise.bias.numpy()
    return np.einsum("oc,nchw->nohw", pw, dw) + b[None, :, None, None]


@torch.no_grad()
def test_controller_forward_matches_straight_line_transcription():
    torch.manual_seed(7)
    c, h, w = 4, 3, 3
    mod = MultiConvAttentionController(c, dilations=(1, 2)).double().eval()
    # the projection ships zeroed; randomize it so the residual branch,
    # and with it the whole upstream chain, actually reaches the output
    mod.project.weight.normal_()
    mod.project.bias.normal_()
    x = torch.randn(1, c, h, w, dtype=torch.float64)
    xn = x.numpy()

    content = _np_separable(mod.gen_content_a, xn) + _np_separable(mod.gen_content_b, xn)
    key = _np_separable(mod.gen_key, xn).reshape(1, c, h * w)
    query = _np_separable(mod.gen_query, xn).reshape(1, c, h * w).transpose(0, 2, 1)
    att = ref_softmax(key @ query)
    mixed = (att @ content.reshape(1, c, h * w)).reshape(1, c, h, w)
    fused = None
    for conv in mod.fuse:
        y = ref_conv2d(mixed, conv.conv.weight.numpy(), conv.conv.bias.numpy(),
                       dilation=conv.dilation)
        fused = y if fused is None else fused + y
    gate_w = mod.pool_gate.weight.numpy()[:, :, 0, 0]
    gate_b = mod.pool_gate.bias.numpy()
    pooled = fused.mean(axis=(2, 3))
    gate = 1.0 / (1.0 + np.exp(-(pooled @ gate_w.T + gate_b)))
    gated = fused * gate[:, :, None, None]
    proj_w = mod.project.weight.numpy()[:, :, 0, 0]
    proj_b = mod.project.bias.numpy()
    want = xn + np.einsum("oc,nchw->nohw", proj_w, gated) + proj_b[None, :, None, None]

    got = mod(x).numpy()
    assert np.max(np.abs(got - want)) < 1e-8


def test_fresh_controller_is_identity():
    torch.manual_seed(8)
    mod = MultiConvAttentionController(6, dilations=(1, 2, 3))
    x = torch.randn(2, 6, 8, 8)
    assert torch.equal(mod(x).detach(), x)
    assert mod.project.zero_init is True


def test_controller_nonidentity_once_projection_moves():
    torch.manual_seed(9)
    mod = MultiConvAttentionController(6, dilations=(1,))
    with torch.no_grad():
        mod.project.weight.normal_()
    x = torch.randn(1, 6, 8, 8)
    assert not torch.equal(mod(x).detach(), x)


def test_temperature_parameter_presence():
    off = MultiConvAttentionController(4)
    on = MultiConvAttentionController(4, learnable_temperature=True)
    assert off.temperature is None
    assert isinstance(on.temperature, torch.nn.Parameter)
    assert float(on.temperature.detach()) == 1.0


def test_controller_parameter_count_formula():
    c, dil = 8, (1, 2, 3)
    mod = MultiConvAttentionController(c, dil)
    sep = 9 * c + c * c + c
    want = 4 * sep + len(dil) * (9 * c * c + c) + (c * c + c) + (c * c + c)
    assert sum(p.numel() for p in mod.parameters()) == want
    with_temp = MultiConvAttentionController(c, dil, learnable_temperature=True)
    assert sum(p.numel() for p in with_temp.parameters()) == want + 1
