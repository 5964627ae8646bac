"""Run configuration for the command-line front end.

A run config is a JSON object; every key is optional::

    {
      "data":  {"path": null, "column": "OT", "synth": {...SynthConfig fields}},
      "seq_len": 96, "horizon": 96,
      "variant": "FullModel", "variants": ["FullModel", ...],
      "seeds": [42, 43, 44],
      "seq_lens": [48, 96, 192], "horizons": [24, 48, 96, 192],
      "model": {...ModelConfig fields},
      "train": {...TrainConfig fields except seed},
      "n_samples": 8,
      "out": "runs/default"
    }

Precedence: built-in defaults, then the config file, then command-line
flags. When ``data.path`` is null the synthetic generator is used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .datagen import SynthConfig
from .decomposition import COMPONENT_NAMES
from .evaluation import AblationVariant
from .model import ModelConfig, TrainConfig


class ConfigError(ValueError):
    def __init__(self, errors: List[str]) -> None:
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


ALL_VARIANTS = tuple(v.value for v in AblationVariant)


@dataclass(frozen=True)
class RunConfig:
    data_path: Optional[str] = None
    column: str = "OT"
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(n_points=4000))
    seq_len: int = 96
    horizon: int = 96
    variant: str = "FullModel"
    variants: Tuple[str, ...] = ALL_VARIANTS
    seeds: Tuple[int, ...] = (42, 43, 44)
    seq_lens: Tuple[int, ...] = (48, 96, 192)
    horizons: Tuple[int, ...] = (24, 48, 96, 192)
    model: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    n_samples: int = 8
    out: str = "runs/default"

    @property
    def dataset_id(self) -> str:
        if self.data_path:
            return f"csv:{Path(self.data_path).name}:{self.column}"
        s = self.synth
        return f"synth:n={s.n_points}:seed={s.seed}"

    def model_config(self, **over) -> ModelConfig:
        d = {**self.model, "seq_len": self.seq_len, "horizon": self.horizon, **over}
        return ModelConfig.from_dict(d)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def to_dict(self) -> dict:
        return {
            "data": {"path": self.data_path, "column": self.column, "synth": self.synth.to_dict()},
            "seq_len": self.seq_len,
            "horizon": self.horizon,
            "variant": self.variant,
            "variants": list(self.variants),
            "seeds": list(self.seeds),
            "seq_lens": list(self.seq_lens),
            "horizons": list(self.horizons),
            "model": dict(sorted(self.model.items())),
            "train": dict(sorted(self.train.items())),
            "n_samples": self.n_samples,
            "out": self.out,
        }


_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed"}
_SYNTH_FIELDS = {f.name for f in fields(SynthConfig)}
_TOP = {"data", "seq_len", "horizon", "variant", "variants", "seeds", "seq_lens",
        "horizons", "model", "train", "n_samples", "out"}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos_int(errs, path, v):
    if not _is_int(v) or v < 1:
        errs.append(f"{path}: expected a positive integer, got {v!r}")


def _int_list(errs, path, v):
    if not isinstance(v, list) or not v:
        errs.append(f"{path}: expected a non-empty list of positive integers")
        return
    for i, x in enumerate(v):
        _pos_int(errs, f"{path}[{i}]", x)


def _check_synth(errs, d) -> None:
    for k, v in d.items():
        p = f"data.synth.{k}"
        if k not in _SYNTH_FIELDS:
            errs.append(f"{p}: unknown field")
        elif k in ("n_points", "seed"):
            if not _is_int(v) or v < 0:
                errs.append(f"{p}: expected a non-negative integer, got {v!r}")
            elif k == "n_points" and v < 1000:
                errs.append(f"{p}: must be at least 1000")
        elif not _is_num(v):
            errs.append(f"{p}: expected a number, got {v!r}")
        elif k in ("noise_std", "target_std") and v < 0:
            errs.append(f"{p}: must be non-negative")
        elif k == "daytime_boost" and v < 1:
            errs.append(f"{p}: must be >= 1")
        elif k == "drop_rate" and not 0 <= v < 1:
            errs.append(f"{p}: must lie in [0, 1)")


def _check_model(errs, d) -> None:
    for k, v in d.items():
        p = f"model.{k}"
        if k not in _MODEL_FIELDS or k in ("seq_len", "horizon"):
            errs.append(f"{p}: unknown field" if k not in _MODEL_FIELDS
                        else f"{p}: set the top-level {k} instead")
        elif k in ("decompose", "conditional", "lifted"):
            if not isinstance(v, bool):
                errs.append(f"{p}: expected true or false")
        elif k == "windows":
            if not (isinstance(v, list) and len(v) == 3 and all(_is_int(w) and w > 0 and w % 2 for w in v)
                    and v[0] < v[1] < v[2]):
                errs.append(f"{p}: expected three increasing odd positive integers")
        elif k == "drop_components":
            if not isinstance(v, list) or any(c not in COMPONENT_NAMES for c in v):
                errs.append(f"{p}: expected a list drawn from {list(COMPONENT_NAMES)}")
        elif k == "prediction":
            if v not in ("eps", "x0"):
                errs.append(f"{p}: expected 'eps' or 'x0'")
        elif k in ("beta_start", "beta_end"):
            if not _is_num(v) or not 0 < v < 1:
                errs.append(f"{p}: expected a number in (0, 1)")
        elif k == "recon_weight":
            if not _is_num(v) or v < 0:
                errs.append(f"{p}: expected a non-negative number")
        else:
            _pos_int(errs, p, v)
    bs, be = d.get("beta_start", ModelConfig.beta_start), d.get("beta_end", ModelConfig.beta_end)
    if _is_num(bs) and _is_num(be) and bs > be:
        errs.append("model.beta_start: must not exceed model.beta_end")


def _check_train(errs, d) -> None:
    for k, v in d.items():
        p = f"train.{k}"
        if k not in _TRAIN_FIELDS:
            errs.append(f"{p}: unknown field" if k != "seed" else f"{p}: use seeds or --seed")
        elif k in ("lr", "clip_norm"):
            if not _is_num(v) or v <= 0:
                errs.append(f"{p}: expected a positive number")
        else:
            _pos_int(errs, p, v)


def validate_dict(raw: dict) -> List[str]:
    """Every problem in ``raw``, each prefixed with its field path."""
    errs: List[str] = []
    if not isinstance(raw, dict):
        return ["<root>: expected a JSON object"]
    for k in raw:
        if k not in _TOP:
            errs.append(f"{k}: unknown field")
    data = raw.get("data", {})
    if not isinstance(data, dict):
        errs.append("data: expected an object")
    else:
        for k in data:
            if k not in ("path", "column", "synth"):
                errs.append(f"data.{k}: unknown field")
        if data.get("path") is not None and not isinstance(data["path"], str):
            errs.append("data.path: expected a string or null")
        if "column" in data and not isinstance(data["column"], str):
            errs.append("data.column: expected a string")
        synth = data.get("synth", {})
        if isinstance(synth, dict):
            _check_synth(errs, synth)
        else:
            errs.append("data.synth: expected an object")
    for k in ("seq_len", "horizon", "n_samples"):
        if k in raw:
            _pos_int(errs, k, raw[k])
    for k in ("seeds", "seq_lens", "horizons"):
        if k in raw:
            if k == "seeds":
                if not isinstance(raw[k], list) or not raw[k] or not all(_is_int(s) and s >= 0 for s in raw[k]):
                    errs.append("seeds: expected a non-empty list of non-negative integers")
            else:
                _int_list(errs, k, raw[k])
    names = [raw["variant"]] if "variant" in raw else []
    if "variants" in raw:
        if not isinstance(raw["variants"], list) or not raw["variants"]:
            errs.append("variants: expected a non-empty list")
        else:
            names += raw["variants"]
    for n in names:
        try:
            AblationVariant.parse(str(n))
        except ValueError:
            errs.append(f"variant: unknown {n!r}; choose from {list(ALL_VARIANTS)}")
    for k, check in (("model", _check_model), ("train", _check_train)):
        sub = raw.get(k, {})
        if isinstance(sub, dict):
            check(errs, sub)
        else:
            errs.append(f"{k}: expected an object")
    if "out" in raw and not isinstance(raw["out"], str):
        errs.append("out: expected a string")
    if not errs:
        # cross-field checks need a concrete model config
        try:
            _build(raw).model_config()
        except ValueError as exc:
            errs.extend(f"model: {e}" for e in str(exc).split("; "))
    return errs


def _build(raw: dict) -> RunConfig:
    data = raw.get("data", {})
    synth = SynthConfig(**{"n_points": 4000, **data.get("synth", {})})
    model = dict(raw.get("model", {}))
    if "windows" in model:
        model["windows"] = tuple(model["windows"])
    if "drop_components" in model:
        model["drop_components"] = tuple(model["drop_components"])
    return RunConfig(
        data_path=data.get("path"),
        column=data.get("column", "OT"),
        synth=synth,
        seq_len=raw.get("seq_len", 96),
        horizon=raw.get("horizon", 96),
        variant=AblationVariant.parse(raw.get("variant", "FullModel")).value,
        variants=tuple(AblationVariant.parse(v).value for v in raw.get("variants", ALL_VARIANTS)),
        seeds=tuple(raw.get("seeds", (42, 43, 44))),
        seq_lens=tuple(raw.get("seq_lens", (48, 96, 192))),
        horizons=tuple(raw.get("horizons", (24, 48, 96, 192))),
        model=model,
        train=dict(raw.get("train", {})),
        n_samples=raw.get("n_samples", 8),
        out=raw.get("out", "runs/default"),
    )


def merge(raw: dict, overrides: dict) -> dict:
    """Apply flag overrides (already in config-key form) on top of ``raw``."""
    out = json.loads(json.dumps(raw))
    for k, v in overrides.items():
        if v is None:
            continue
        if k == "synth_seed":
            out.setdefault("data", {}).setdefault("synth", {})["seed"] = v
        else:
            out[k] = v
    return out


def load_run_config(path: Optional[str], overrides: Optional[dict] = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<file>: invalid JSON ({exc})"]) from exc
    raw = merge(raw, overrides or {})
    errs = validate_dict(raw)
    if errs:
        raise ConfigError(errs)
    return _build(raw)
