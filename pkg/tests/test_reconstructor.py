import numpy as np
import pytest
import torch

from mrcdm.decomposition import decompose
from mrcdm.model import MRCDM, ModelConfig, WindowCodec
from mrcdm.reconstructor import CrossScaleAttention, Reconstructor, adaptive_combine


def test_attention_rows_sum_to_one():
    att = CrossScaleAttention(16)
    a = att.attention(torch.randn(5, 4, 16, dtype=torch.float32))
    assert torch.allclose(a.sum(-1), torch.ones(5, 4))


def test_zero_projection_makes_attention_identity():
    att = CrossScaleAttention(16)
    t = torch.randn(3, 4, 16)
    assert torch.equal(att(t), t)


def test_uniform_weights_give_sum():
    comps = torch.randn(2, 4, 96, dtype=torch.float64)
    out = adaptive_combine(comps, torch.full((2, 4), 0.25, dtype=torch.float64))
    assert torch.allclose(out, comps.sum(1), atol=1e-14)


def test_one_hot_weight():
    comps = torch.randn(4, 96)
    w = torch.tensor([0.0, 0.0, 1.0, 0.0])
    assert torch.allclose(adaptive_combine(comps, w), 4 * comps[2])


def test_initial_weights_uniform_and_simplex():
    model = MRCDM(ModelConfig(), seed=0)
    fused = torch.randn(3, 35, 32, 32)
    with torch.no_grad():
        _, _, w = model.reconstruct(fused)
    assert torch.allclose(w, torch.full_like(w, 0.25))
    with torch.no_grad():
        model.reconstructor.weight_head.weight.normal_()
        _, _, w = model.reconstruct(fused)
    assert torch.all(w >= 0) and torch.allclose(w.sum(-1), torch.ones(3))


def test_invert_components_round_trip(rng):
    cfg = ModelConfig()
    codec = WindowCodec(cfg)
    x = rng.normal(size=(4, 96))
    native = codec.encode(x, "target")
    comps = codec.decode({k: v[:, 0] for k, v in native.items()})
    ref = decompose(x).as_dict()
    for name in ref:
        assert np.max(np.abs(comps[name] - ref[name])) < 1e-6


def test_zero_fused_gives_zero_components():
    model = MRCDM(ModelConfig(), seed=0)
    with torch.no_grad():
        comps = model.reconstructor.invert_components(model.to_native(torch.zeros(2, 35, 32, 32)))
    assert torch.all(comps == 0)


def test_missing_block_named():
    r = Reconstructor([("a", 1)], {"a": torch.zeros(1024, 96)})
    with pytest.raises(ValueError, match="a"):
        r.invert_components({})
