import pytest
import torch

from mrcdm.fusion import FULL_BLOCKS, ChannelLift, FusionError, Fuser, lift_channels, layout_of


def images(batch=2, gen=None):
    gen = gen or torch.Generator().manual_seed(0)
    return {name: torch.randn(batch, native, 32, 32, generator=gen) for name, native, _ in FULL_BLOCKS}


def masks(cols=23):
    m = torch.zeros(32, 32, dtype=torch.bool)
    m[:, :cols] = True
    return {name: m for name, _, _ in FULL_BLOCKS}


def test_layout_is_7_7_14_7():
    assert layout_of(FULL_BLOCKS) == {
        "trend1": (0, 7), "trend2": (7, 14), "trend3": (14, 28), "residual": (28, 35)
    }
    assert layout_of(FULL_BLOCKS, lifted=False)["residual"] == (4, 5)


def test_identity_block_initialisation():
    lift = ChannelLift(2, 14, torch.Generator().manual_seed(1))
    x = torch.randn(3, 2, 32, 32)
    y = lift(x)
    assert torch.equal(y[:, 0], x[:, 0]) and torch.equal(y[:, 7], x[:, 1])


def test_zero_input_gives_bias_on_valid_cells_only():
    lift = ChannelLift(1, 7)
    with torch.no_grad():
        lift.bias.fill_(0.5)
    valid = masks()["trend1"]
    out = lift_channels(torch.zeros(1, 1, 32, 32), lift, valid)
    assert torch.all(out[..., valid] == 0.5) and torch.all(out[..., ~valid] == 0.0)


@pytest.mark.parametrize("native,declared", [(1, 7), (2, 14)])
def test_pinv_recovers_native(native, declared):
    gen = torch.Generator().manual_seed(3)
    lift = ChannelLift(native, declared, gen, init_std=0.5).double()
    with torch.no_grad():
        lift.weight.copy_(torch.randn(declared, native, generator=gen, dtype=torch.float64))
        lift.bias.copy_(torch.randn(declared, generator=gen, dtype=torch.float64))
    x = torch.randn(2, native, 32, 32, generator=gen, dtype=torch.float64)
    assert torch.max(torch.abs(lift.invert(lift(x)) - x)) < 1e-6


def test_arity_mismatch():
    with pytest.raises(FusionError):
        ChannelLift(1, 7)(torch.zeros(1, 2, 32, 32))
    with pytest.raises(FusionError):
        ChannelLift(2, 1)


def test_fuse_defuse_exact():
    f = Fuser(generator=torch.Generator().manual_seed(0))
    imgs, m = images(), masks()
    fused = f.fuse(imgs, m)
    assert fused.data.shape == (2, 35, 32, 32)
    parts = f.defuse(fused)
    for name, lift in f.lifts.items():
        assert torch.equal(parts[name], lift_channels(imgs[name], lift, m[name]))
    assert torch.equal(torch.cat(list(parts.values()), dim=1), fused.data)


def test_fuse_names_missing_component():
    f = Fuser()
    imgs = images()
    del imgs["trend3"]
    with pytest.raises(FusionError, match="trend3"):
        f.fuse(imgs, masks())


def test_zero_block_clears_slice():
    f = Fuser()
    fused = f.fuse(images(), masks()).zero_block("trend1")
    assert not fused.block("trend1").any() and fused.block("trend2").any()


def test_unlifted_fuser_is_plain_concatenation():
    f = Fuser(lifted=False)
    imgs = images()
    fused = f.fuse(imgs, masks())
    assert fused.channels == 5
    assert torch.equal(fused.block("trend3"), imgs["trend3"])
    assert torch.equal(f.to_native(fused)["residual"], imgs["residual"])


def test_to_native_masks_invalid_cells():
    f = Fuser(generator=torch.Generator().manual_seed(0))
    m = masks()
    imgs = {k: v * m[k] for k, v in images().items()}
    native = f.to_native(f.fuse(imgs, m))
    for name in imgs:
        assert torch.max(torch.abs(native[name] - imgs[name])) < 1e-5


def test_project_restores_column_norms():
    lift = ChannelLift(2, 14, torch.Generator().manual_seed(0))
    target = lift.col_norms.clone()
    with torch.no_grad():
        lift.weight.mul_(0.1)
    lift.project_()
    assert torch.allclose(lift.weight.norm(dim=0), target)


def test_layout_table():
    rows = Fuser().layout_table()
    assert rows[2] == {"component": "trend3", "native": 2, "channels": [14, 28]}
