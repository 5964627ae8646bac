import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrcdm.transforms import (
    CANVAS,
    ImageTensor,
    StftParams,
    TransformError,
    delay_columns,
    delay_embed,
    delay_embed_invert,
    delay_starts,
    image_to_csv,
    image_to_svg,
    istft,
    istft_batch,
    stft,
    stft_batch,
)

series = arrays(np.float64, st.integers(64, 125), elements=st.floats(-1e3, 1e3))


@given(series)
def test_delay_round_trip(x):
    back = delay_embed_invert(delay_embed(x))
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


def test_delay_geometry_for_96():
    assert delay_starts(96).tolist() == list(range(0, 64, 3)) + [64]
    img = delay_embed(np.arange(96.0))
    assert img.data.shape == (1, CANVAS, CANVAS)
    assert img.meta["columns"] == 23
    assert img.data[0, 5, 2] == 6 + 5
    assert img.data[0, 31, 22] == 95
    assert not img.valid_mask[:, 23:].any() and not img.data[0, :, 23:].any()


def test_delay_every_sample_encoded():
    for n in range(32, 126):
        covered = np.unique((np.arange(32)[:, None] + delay_starts(n)[None]).ravel())
        assert covered.size == n


def test_delay_rejects_bad_lengths():
    with pytest.raises(TransformError):
        delay_embed(np.zeros(20))
    with pytest.raises(TransformError):
        delay_embed(np.zeros(200))


def test_delay_invert_checks_mask():
    img = delay_embed(np.arange(96.0))
    mask = img.valid_mask.copy()
    mask[:, 25] = True
    with pytest.raises(TransformError):
        delay_embed_invert(ImageTensor(img.data, mask, img.meta))


@given(series)
def test_stft_round_trip(x):
    back = istft(stft(x))
    scale = max(1.0, np.max(np.abs(x)))
    assert np.max(np.abs(back - x)) <= 1e-9 * scale


def test_stft_matches_direct_dft():
    p = StftParams()
    n = np.arange(96)
    x = np.cos(2 * np.pi * 5 * n / 64) + 0.1 * n / 96
    img = stft(x, p)
    w = p.window
    for f in range(img.meta["frames"]):
        seg = x[f * 16 : f * 16 + 64] * w
        for k in (0, 3, 5, 17):
            ref = np.sum(seg * np.exp(-2j * np.pi * k * np.arange(64) / 64)) / w.sum()
            assert abs(img.data[0, k, f] - ref.real) < 1e-12
            assert abs(img.data[1, k, f] - ref.imag) < 1e-12


def test_stft_constant_dc_equals_value():
    img = stft(np.full(96, 2.5))
    assert np.allclose(img.data[0, 0, :3], 2.5)
    # the periodic Hann window itself only spans bins 0 and 1
    assert np.allclose(img.data[0, 1, :3], -1.25)
    assert np.max(np.abs(img.data[:, 2:, :3])) < 1e-12
    assert np.max(np.abs(img.data[1, :, :3])) < 1e-12


def test_stft_geometry_and_mask():
    img = stft(np.zeros(96))
    assert img.data.shape == (2, 32, 32)
    assert img.meta["frames"] == 3
    assert img.valid_mask[:, :3].all() and not img.valid_mask[:, 3:].any()


def test_packed_nyquist_round_trip(rng):
    x = rng.normal(size=(4, 192))
    p = StftParams()
    img, _, _ = stft_batch(x, p, pack_nyquist=True)
    back, covered = istft_batch(img, 192, p, pack_nyquist=True)
    assert np.max(np.abs(back[:, covered] - x[:, covered])) < 1e-12
    assert covered[1:].all()


def test_istft_needs_meta():
    img = stft(np.zeros(96))
    bad = ImageTensor(img.data, img.valid_mask, {"kind": "stft"})
    with pytest.raises(TransformError):
        istft(bad)


def test_params_validation():
    with pytest.raises(ValueError):
        StftParams(64, 24)
    with pytest.raises(ValueError):
        StftParams(128, 16)
    with pytest.raises(TransformError):
        stft(np.zeros(32))


def test_dumps(tmp_path):
    img = delay_embed(np.arange(96.0))
    image_to_csv(img, tmp_path / "i.csv")
    rows = (tmp_path / "i.csv").read_text().splitlines()
    assert rows[0] == "channel,row,col,value" and len(rows) == 1 + CANVAS * CANVAS
    image_to_svg(img, tmp_path / "i.svg")
    assert (tmp_path / "i.svg").read_text().startswith("<svg")


def test_delay_columns_counts():
    assert delay_columns(96) == 23
    assert delay_columns(95) == 22
