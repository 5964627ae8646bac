"""Deterministic JSON checkpoints.

Tensors are stored as base64 of their little-endian bytes next to a shape
and dtype table, with keys sorted, so identical weights give identical
files. Buffers that the model rebuilds from its config (inverse transform
matrices, canvas masks, the noise schedule) are not stored.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from .model import MRCDM, ModelConfig, config_hash

FORMAT = "mrcdm-checkpoint/1"
_DERIVED = ("reconstructor.inv_", "mask_", "denoiser.alpha_bars")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "bool": "|b1"}


class CheckpointError(ValueError):
    pass


def _derived(key: str) -> bool:
    return key.startswith(_DERIVED)


def _encode(t: torch.Tensor) -> dict:
    a = t.detach().cpu().numpy()
    name = str(a.dtype)
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    raw = np.ascontiguousarray(a, dtype=_DTYPES[name]).tobytes()
    return {"dtype": name, "shape": list(a.shape), "data": base64.b64encode(raw).decode("ascii")}


def _decode(entry: dict) -> torch.Tensor:
    dt = np.dtype(_DTYPES[entry["dtype"]])
    a = np.frombuffer(base64.b64decode(entry["data"]), dtype=dt)
    if a.size != int(np.prod(entry["shape"], dtype=np.int64)):
        raise CheckpointError("tensor payload does not match its declared shape")
    return torch.from_numpy(a.reshape(entry["shape"]).astype(dt.newbyteorder("=")))


def checkpoint_dict(model: MRCDM, seed: int, extra: Optional[dict] = None) -> dict:
    state = {k: _encode(v) for k, v in sorted(model.state_dict().items()) if not _derived(k)}
    cfg = model.cfg.to_dict()
    return {
        "format": FORMAT,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "schedule": model.schedule.to_dict(),
        "shapes": {k: v["shape"] for k, v in state.items()},
        "tensors": state,
        "extra": extra or {},
    }


def save_checkpoint(model: MRCDM, path, seed: int, extra: Optional[dict] = None) -> None:
    text = json.dumps(checkpoint_dict(model, seed, extra), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> Tuple[MRCDM, dict]:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    if blob.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {blob.get('format')!r}")
    cfg = ModelConfig.from_dict(blob["config"])
    if config_hash(cfg.to_dict()) != blob["config_hash"]:
        raise CheckpointError("config hash mismatch")
    model = MRCDM(cfg, seed=blob["seed"])
    expected = {k: list(v.shape) for k, v in model.state_dict().items() if not _derived(k)}
    problems = []
    for key in sorted(set(expected) | set(blob["tensors"])):
        if key not in blob["tensors"]:
            problems.append(f"missing tensor {key}")
        elif key not in expected:
            problems.append(f"unexpected tensor {key}")
        elif blob["tensors"][key]["shape"] != expected[key]:
            problems.append(f"{key}: shape {blob['tensors'][key]['shape']} != {expected[key]}")
    if problems:
        raise CheckpointError("; ".join(problems))
    state = {k: _decode(v) for k, v in blob["tensors"].items()}
    model.load_state_dict(state, strict=False)
    model.eval()
    return model, blob
