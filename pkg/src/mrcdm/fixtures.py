"""Golden CSV fixtures and their checker.

A fixture directory holds ``fixtures.json``, a list of entries::

    {"name": ..., "operation": ..., "input": "x.csv", "expected": "y.csv", "tolerance": 1e-12}

Inputs and expected outputs are plain CSV with a header row. Every
operation maps the input table to a table with the expected file's columns;
``verify_fixtures`` compares them cell by cell within the tolerance
(0 means bitwise equality of the parsed doubles).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import torch

from .decomposition import decompose, recompose
from .evaluation import compute_metrics
from .fusion import FULL_BLOCKS, Fuser
from .series import Normalizer, TimeSeries, denormalize, fit_normalizer, normalize
from .transforms import StftParams, delay_embed, delay_embed_invert, stft, istft

DEFAULT_DIR = Path(__file__).resolve().parents[2] / "fixtures"

Table = Dict[str, np.ndarray]


def read_table(path) -> Table:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def write_table(table: Table, path) -> None:
    cols = list(table)
    n = len(table[cols[0]])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(n):
            w.writerow([repr(float(table[c][i])) for c in cols])


def image_table(data: np.ndarray) -> Table:
    idx = np.array(list(np.ndindex(*data.shape)), dtype=float)
    return {"channel": idx[:, 0], "row": idx[:, 1], "col": idx[:, 2], "value": data.ravel().astype(float)}


# --- operations ----------------------------------------------------------------


def op_decompose(t: Table) -> Table:
    c = decompose(t["x"])
    return {"trend1": c.trend1, "trend2": c.trend2, "trend3": c.trend3, "residual": c.residual,
            "recomposed": recompose(c)}


def op_stft(t: Table) -> Table:
    return image_table(stft(t["x"], StftParams()).data)


def op_stft_roundtrip(t: Table) -> Table:
    return {"x": istft(stft(t["x"]))}


def op_delay_embed(t: Table) -> Table:
    return image_table(delay_embed(t["x"]).data)


def op_delay_roundtrip(t: Table) -> Table:
    return {"x": delay_embed_invert(delay_embed(t["x"]))}


def op_normalize(t: Table) -> Table:
    s = TimeSeries(t["x"])
    n = fit_normalizer(s)
    z = normalize(s, n)
    return {"z": z.values, "restored": denormalize(z, Normalizer(n.mean, n.std)).values}


def op_metrics(t: Table) -> Table:
    r = compute_metrics(t["pred"], t["truth"])
    return {"mse": np.array([r.mse]), "mae": np.array([r.mae]), "rmse": np.array([r.rmse])}


def op_fuse(t: Table) -> Table:
    """Plain-concatenation fusion of long-format component images.

    The input has one row per cell with columns ``block`` (index into the
    component order), ``channel``, ``row``, ``col`` and ``value``.
    """
    imgs = {}
    for b, (name, native, _) in enumerate(FULL_BLOCKS):
        sel = t["block"] == b
        img = np.zeros((native, 32, 32))
        idx = (t["channel"][sel].astype(int), t["row"][sel].astype(int), t["col"][sel].astype(int))
        img[idx] = t["value"][sel]
        imgs[name] = torch.as_tensor(img[None], dtype=torch.float64)
    fuser = Fuser(lifted=False).double()
    masks = {name: torch.ones(32, 32, dtype=torch.bool) for name, _, _ in FULL_BLOCKS}
    fused = fuser.fuse(imgs, masks)
    parts = fuser.defuse(fused)
    back = torch.cat([parts[name] for name, _, _ in FULL_BLOCKS], dim=1)
    out = image_table(fused.data[0].numpy())
    out["defused"] = back[0].numpy().ravel()
    return out


OPERATIONS: Dict[str, Callable[[Table], Table]] = {
    "decompose": op_decompose,
    "stft": op_stft,
    "stft_roundtrip": op_stft_roundtrip,
    "delay_embed": op_delay_embed,
    "delay_roundtrip": op_delay_roundtrip,
    "normalize": op_normalize,
    "metrics": op_metrics,
    "fuse": op_fuse,
}


@dataclass(frozen=True)
class FixtureResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    message: str = ""


def verify_fixtures(root=DEFAULT_DIR) -> List[FixtureResult]:
    root = Path(root)
    entries = json.loads((root / "fixtures.json").read_text(encoding="utf-8"))
    results = []
    for e in entries:
        got = OPERATIONS[e["operation"]](read_table(root / e["input"]))
        want = read_table(root / e["expected"])
        tol = float(e["tolerance"])
        if set(got) != set(want):
            results.append(FixtureResult(e["name"], False, float("inf"), tol,
                                         f"columns {sorted(got)} != {sorted(want)}"))
            continue
        worst = 0.0
        for col in want:
            if got[col].shape != want[col].shape:
                worst = float("inf")
                break
            worst = max(worst, float(np.max(np.abs(got[col] - want[col]), initial=0.0)))
        results.append(FixtureResult(e["name"], worst <= tol, worst, tol))
    return results
