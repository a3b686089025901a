"""Synthetic image/caption pairs.

Every scene is one filled shape drawn at one of five positions with one of
three intensities on a dim background, plus uniform per-pixel noise. The
caption names the same attributes; the preposition (``in``/``at``/``near``)
is drawn per scene, so reproducing a scene's exact caption requires having
seen that scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ExhaustionError

SHAPES = ("square", "circle", "triangle", "cross")
POSITIONS = ("top-left", "top-right", "bottom-left", "bottom-right", "center")
INTENSITIES = ("dark", "gray", "bright")
PREPOSITIONS = ("in", "at", "near")

PAD = "<pad>"
# "a" sits at index 0 so an untrained (all-tie) decoder still emits words
VOCAB = (
    "a", "dark", "gray", "bright",
    "square", "circle", "triangle", "cross",
    "in", "at", "near", "the",
    "top", "bottom", "left", "right", "center",
    PAD,
)
TOKEN_INDEX = {tok: i for i, tok in enumerate(VOCAB)}
CAPTION_LENGTH = 7

INTENSITY_VALUE = {"dark": 0.35, "gray": 0.6, "bright": 0.9}
BACKGROUND = 0.1
NOISE_AMPLITUDE = 0.05
DEFAULT_IMAGE_SHAPE = (12, 12)
DEFAULT_NOISE_POOL = 2**16

N_COMBOS = len(SHAPES) * len(POSITIONS) * len(INTENSITIES)


@dataclass(frozen=True)
class SyntheticScene:
    id: str
    shape: str
    position: str
    intensity: str
    preposition: str
    noise_seed: int
    image: np.ndarray

    @property
    def key(self) -> tuple:
        return (self.shape, self.position, self.intensity, self.noise_seed)


def caption_tokens(shape: str, position: str, intensity: str, preposition: str) -> list[str]:
    """Fixed-length token sequence, right-padded with ``<pad>``."""
    where = ["center"] if position == "center" else position.split("-")
    tokens = ["a", intensity, shape, preposition, "the", *where]
    return tokens + [PAD] * (CAPTION_LENGTH - len(tokens))


def caption_text(tokens: Sequence[str]) -> str:
    tokens = list(tokens)
    while tokens and tokens[-1] == PAD:
        tokens.pop()
    return " ".join(tokens)


def encode_caption(tokens: Sequence[str]) -> np.ndarray:
    return np.array([TOKEN_INDEX[t] for t in tokens], dtype=np.int64)


def _shape_mask(shape: str, cy: float, cx: float, r: float, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "circle":
        return dy**2 + dx**2 <= r**2
    if shape == "triangle":
        # apex up, base at cy + r
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if shape == "cross":
        arm = max(r / 3, 0.5)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    raise ValueError(f"unknown shape {shape!r}")


def render_scene(
    shape: str,
    position: str,
    intensity: str,
    noise_seed: int,
    image_shape: tuple[int, int] = DEFAULT_IMAGE_SHAPE,
) -> np.ndarray:
    h, w = image_shape
    r = min(h, w) / 6
    cy = {"top": h / 4, "bottom": 3 * h / 4}
    cx = {"left": w / 4, "right": 3 * w / 4}
    if position == "center":
        y0, x0 = (h - 1) / 2, (w - 1) / 2
    else:
        vert, horiz = position.split("-")
        y0, x0 = cy[vert] - 0.5, cx[horiz] - 0.5
    img = np.full((h, w), BACKGROUND)
    img[_shape_mask(shape, y0, x0, r, h, w)] = INTENSITY_VALUE[intensity]
    noise = np.random.default_rng(noise_seed).uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(h, w))
    return np.clip(img + noise, 0.0, 1.0)


def _decode(index: int, noise_pool: int) -> tuple[str, str, str, int]:
    combo, noise_seed = divmod(index, noise_pool)
    combo, k = divmod(combo, len(INTENSITIES))
    s, p = divmod(combo, len(POSITIONS))
    return SHAPES[s], POSITIONS[p], INTENSITIES[k], noise_seed


def generate_dataset(
    n_members: int,
    n_nonmembers: int,
    seed: int,
    image_shape: tuple[int, int] = DEFAULT_IMAGE_SHAPE,
    noise_pool: int = DEFAULT_NOISE_POOL,
) -> tuple[list[tuple[SyntheticScene, list[str]]], list[tuple[SyntheticScene, list[str]]]]:
    """Draw disjoint member and non-member sets of ``(scene, caption_tokens)``.

    Scene tuples ``(shape, position, intensity, noise_seed)`` are sampled
    without replacement from ``N_COMBOS * noise_pool`` possibilities.
    """
    if n_members < 1 or n_nonmembers < 1:
        raise ValueError("need at least one member and one non-member")
    total = n_members + n_nonmembers
    capacity = N_COMBOS * noise_pool
    if total > capacity:
        raise ExhaustionError(
            f"{total} disjoint scenes requested but only {capacity} distinct scene tuples exist"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE9E]))
    picks = rng.choice(capacity, size=total, replace=False)
    preps = rng.integers(len(PREPOSITIONS), size=total)
    pairs = []
    for k, (idx, prep) in enumerate(zip(picks, preps)):
        shape, position, intensity, noise_seed = _decode(int(idx), noise_pool)
        preposition = PREPOSITIONS[int(prep)]
        scene = SyntheticScene(
            id=f"img-{k:04d}",
            shape=shape,
            position=position,
            intensity=intensity,
            preposition=preposition,
            noise_seed=noise_seed,
            image=render_scene(shape, position, intensity, noise_seed, image_shape),
        )
        pairs.append((scene, caption_tokens(shape, position, intensity, preposition)))
    return pairs[:n_members], pairs[n_members:]


def split_members(members: Sequence, fraction: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Shuffle deterministically and split ``ceil(fraction * n)`` / remainder."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(members)
    n_train = min(n, math.ceil(round(fraction * n, 9)))
    order = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B117])).permutation(n)
    shuffled = [members[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def export_dataset(
    out_dir: str | Path,
    train: Sequence,
    validation: Sequence,
    nonmembers: Sequence,
) -> list[Path]:
    """Write 8-bit PGM images and ``index.jsonl``; return the files written."""
    from PIL import Image

    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = []
    for split, pairs in (("train", train), ("validation", validation), ("non-member", nonmembers)):
        for scene, tokens in pairs:
            path = img_dir / f"{scene.id}.pgm"
            pixels = np.round(scene.image * 255).astype(np.uint8)
            Image.fromarray(pixels).save(path)
            written.append(path)
            rows.append(
                {
                    "id": scene.id,
                    "split": split,
                    "caption": caption_text(tokens),
                    "shape": scene.shape,
                    "position": scene.position,
                    "intensity": scene.intensity,
                    "noise_seed": scene.noise_seed,
                }
            )
    rows.sort(key=lambda row: row["id"])
    index = out_dir / "index.jsonl"
    index.write_text("".join(json.dumps(row, sort_keys=True) + "\n" for row in rows), encoding="utf-8")
    written.append(index)
    return written
