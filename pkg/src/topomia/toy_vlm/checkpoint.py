"""JSON checkpoint format for :class:`ToyModelParams`.

Layout (``format_version`` 1)::

    {
      "format": "topomia-toy-checkpoint",
      "format_version": 1,
      "sheet_shape": [H, W],
      "image_shape": [H_img, W_img],
      "vocab": [...],
      "train_config": {...},
      "arrays": {"encoder_weights": {"shape": [...], "data": [...]}, ...}
    }

Floats are written with ``repr`` precision, so a load reproduces the
parameters bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .data import VOCAB
from .model import ToyModelParams, TrainConfig

FORMAT = "topomia-toy-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: ToyModelParams,
    image_shape: tuple[int, int],
    train_config: TrainConfig | None = None,
) -> None:
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "sheet_shape": list(params.sheet_shape),
        "image_shape": list(image_shape),
        "vocab": list(VOCAB),
        "train_config": train_config.to_dict() if train_config else None,
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.arrays().items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ToyModelParams, dict]:
    """Return ``(params, metadata)``; metadata holds shapes, vocab and train config."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT:
        raise DataError(f"{path} is not a toy-model checkpoint")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('format_version')}")
    arrays = {
        name: np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in doc["arrays"].items()
    }
    params = ToyModelParams(**arrays, sheet_shape=tuple(doc["sheet_shape"]))
    meta = {k: doc[k] for k in ("image_shape", "vocab", "train_config")}
    if meta["train_config"] is not None:
        meta["train_config"] = TrainConfig.from_dict(meta["train_config"])
    return params, meta
