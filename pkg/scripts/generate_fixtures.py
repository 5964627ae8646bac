"""Regenerate the golden fixtures in ``fixtures/``.

Expected outputs come from deliberately naive reference code (explicit
loops, a direct DFT, ``math.fsum``) rather than the package functions, so
the fixtures check the vectorised implementation against an independent
computation.

    python scripts/generate_fixtures.py [--out fixtures]
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

from mrcdm.datagen import SplitMix64
from mrcdm.fixtures import write_table


def ref_moving_average(x, w):
    half, n = w // 2, len(x)
    return np.array([
        math.fsum(x[min(max(i + j, 0), n - 1)] for j in range(-half, half + 1)) / w
        for i in range(n)
    ])


def ref_decompose(x):
    m5, m25, m51 = (ref_moving_average(x, w) for w in (5, 25, 51))
    return {"trend1": m5 - m25, "trend2": m25 - m51, "trend3": m51, "residual": x - m5, "recomposed": x}


def ref_stft(x, n_fft=64, hop=16, width=32):
    win = [0.5 - 0.5 * math.cos(2 * math.pi * n / n_fft) for n in range(n_fft)]
    scale = math.fsum(win)
    frames = (len(x) - n_fft) // hop + 1
    img = np.zeros((2, n_fft // 2, width))
    for f in range(frames):
        seg = [x[f * hop + n] * win[n] for n in range(n_fft)]
        for k in range(n_fft // 2):
            re = math.fsum(seg[n] * math.cos(2 * math.pi * k * n / n_fft) for n in range(n_fft))
            im = -math.fsum(seg[n] * math.sin(2 * math.pi * k * n / n_fft) for n in range(n_fft))
            img[0, k, f] = re / scale
            img[1, k, f] = im / scale
    return img


def ref_delay(x, tau=3, d=32, width=32):
    n = len(x)
    starts = list(range(0, n - d + 1, tau))
    if starts[-1] != n - d:
        starts.append(n - d)
    img = np.zeros((1, d, width))
    for c, s in enumerate(starts):
        for r in range(d):
            img[0, r, c] = x[s + r]
    return img


def image_table(img):
    idx = list(np.ndindex(*img.shape))
    return {
        "channel": np.array([i[0] for i in idx], float),
        "row": np.array([i[1] for i in idx], float),
        "col": np.array([i[2] for i in idx], float),
        "value": np.array([img[i] for i in idx]),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "fixtures"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []

    def add(name, op, inp, expected, tol):
        write_table(inp, out / f"{name}_input.csv")
        write_table(expected, out / f"{name}_expected.csv")
        entries.append({"name": name, "operation": op, "input": f"{name}_input.csv",
                        "expected": f"{name}_expected.csv", "tolerance": tol})

    noise = SplitMix64(0).normal(200)
    add("decomposition_seed0", "decompose", {"x": noise}, ref_decompose(noise), 1e-12)

    n = np.arange(160)
    cosine = np.cos(2 * np.pi * 4 * n / 64) + 0.25 * np.cos(2 * np.pi * 9 * n / 64 + 0.3)
    add("stft_cosine", "stft", {"x": cosine}, image_table(ref_stft(cosine)), 1e-9)
    add("stft_roundtrip", "stft_roundtrip", {"x": cosine}, {"x": cosine}, 1e-9)

    walk = np.cumsum(SplitMix64(1).normal(96))
    add("delay_embed_walk", "delay_embed", {"x": walk}, image_table(ref_delay(walk)), 0.0)
    add("delay_roundtrip", "delay_roundtrip", {"x": walk}, {"x": walk}, 1e-12)

    raw = 3.0 + 2.0 * SplitMix64(2).normal(50)
    mu = math.fsum(raw) / len(raw)
    sd = math.sqrt(math.fsum((v - mu) ** 2 for v in raw) / len(raw))
    add("normalize", "normalize", {"x": raw}, {"z": (raw - mu) / sd, "restored": raw}, 1e-12)

    add("metrics_hand", "metrics", {"pred": np.array([1.0, 2.0]), "truth": np.array([3.0, 2.0])},
        {"mse": np.array([2.0]), "mae": np.array([1.0]), "rmse": np.array([math.sqrt(2.0)])}, 0.0)
    add("metrics_offset", "metrics", {"pred": np.arange(5.0) + 1.0, "truth": np.arange(5.0)},
        {"mse": np.array([1.0]), "mae": np.array([1.0]), "rmse": np.array([1.0])}, 0.0)
    add("metrics_identity", "metrics", {"pred": np.arange(4.0), "truth": np.arange(4.0)},
        {"mse": np.array([0.0]), "mae": np.array([0.0]), "rmse": np.array([0.0])}, 0.0)

    # five single-channel component images stacked in component order
    blocks = [(0, 1), (1, 1), (2, 2), (3, 1)]
    cells = SplitMix64(3).normal(5 * 32 * 32)
    rows, fused, pos = [], np.zeros((5, 32, 32)), 0
    for b, native in blocks:
        for ch in range(native):
            for r in range(32):
                for c in range(32):
                    rows.append((b, ch, r, c, cells[pos]))
                    fused[pos // 1024, r, c] = cells[pos]
                    pos += 1
    inp = {k: np.array([row[i] for row in rows], float)
           for i, k in enumerate(("block", "channel", "row", "col", "value"))}
    expected = image_table(fused)
    expected["defused"] = expected["value"]
    add("fuse_concat", "fuse", inp, expected, 0.0)

    (out / "fixtures.json").write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} fixtures to {out}")


if __name__ == "__main__":
    main()
