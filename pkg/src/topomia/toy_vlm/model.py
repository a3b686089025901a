"""A minimal trainable captioner.

The image is flattened and mapped by a linear layer + tanh onto a 2-D sheet
of hidden units (the "cortical" sheet the topographic penalty acts on).
Each caption position has its own linear read-out from the sheet followed by
a softmax over the vocabulary; decoding is per-position argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import topo_reg
from ..errors import DivergenceError, ShapeMismatchError
from ..topo_reg import TopoConfig
from .data import PAD, VOCAB

PROB_FLOOR = 1e-12
DEFAULT_SHEET_SHAPE = (6, 6)


@dataclass
class ToyModelParams:
    encoder_weights: np.ndarray  # (H*W, P)
    encoder_bias: np.ndarray  # (H*W,)
    decoder_weights: np.ndarray  # (L, V, H*W)
    decoder_bias: np.ndarray  # (L, V)
    sheet_shape: tuple[int, int]

    def __post_init__(self) -> None:
        self.sheet_shape = tuple(int(s) for s in self.sheet_shape)
        units = self.sheet_shape[0] * self.sheet_shape[1]
        L, V = self.decoder_bias.shape
        if self.encoder_weights.ndim != 2 or self.encoder_weights.shape[0] != units:
            raise ShapeMismatchError(f"encoder_weights has shape {self.encoder_weights.shape}, expected ({units}, P)")
        for name, shape in (("encoder_bias", (units,)), ("decoder_weights", (L, V, units))):
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def caption_length(self) -> int:
        return self.decoder_bias.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.decoder_bias.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.encoder_weights.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "encoder_weights": self.encoder_weights,
            "encoder_bias": self.encoder_bias,
            "decoder_weights": self.decoder_weights,
            "decoder_bias": self.decoder_bias,
        }

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(**{k: v.copy() for k, v in self.arrays().items()}, sheet_shape=self.sheet_shape)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays().values())


def init_params(
    image_shape: tuple[int, int],
    sheet_shape: tuple[int, int] = DEFAULT_SHEET_SHAPE,
    caption_length: int = 7,
    vocab_size: int = len(VOCAB),
    seed: int = 0,
) -> ToyModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    n_pix = image_shape[0] * image_shape[1]
    units = sheet_shape[0] * sheet_shape[1]
    enc_bound = 1.0 / math.sqrt(n_pix)
    dec_bound = 1.0 / math.sqrt(units)
    return ToyModelParams(
        encoder_weights=rng.uniform(-enc_bound, enc_bound, size=(units, n_pix)),
        encoder_bias=np.zeros(units),
        decoder_weights=rng.uniform(-dec_bound, dec_bound, size=(caption_length, vocab_size, units)),
        decoder_bias=np.zeros((caption_length, vocab_size)),
        sheet_shape=sheet_shape,
    )


def zero_params(image_shape, sheet_shape=DEFAULT_SHEET_SHAPE, caption_length=7, vocab_size=len(VOCAB)):
    p = init_params(image_shape, sheet_shape, caption_length, vocab_size)
    return ToyModelParams(**{k: np.zeros_like(v) for k, v in p.arrays().items()}, sheet_shape=sheet_shape)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: ToyModelParams, images: np.ndarray):
    """Batched forward pass.

    Returns ``(sheets (B, H, W), logits (B, L, V), probs (B, L, V))``.
    """
    x = np.asarray(images, dtype=np.float64)
    x = x.reshape(len(x), -1)
    if x.shape[1] != params.n_pixels:
        raise ShapeMismatchError(f"image has {x.shape[1]} pixels, model expects {params.n_pixels}")
    hidden = np.tanh(x @ params.encoder_weights.T + params.encoder_bias)
    logits = np.einsum("lvu,bu->blv", params.decoder_weights, hidden) + params.decoder_bias
    return hidden.reshape(len(x), *params.sheet_shape), logits, _softmax(logits)


def forward(params: ToyModelParams, image: np.ndarray):
    """Single-image forward pass: ``(sheet (H, W), logits (L, V), probs (L, V))``."""
    sheets, logits, probs = forward_batch(params, np.asarray(image)[None])
    return sheets[0], logits[0], probs[0]


def caption_loss(probs: np.ndarray, target: Sequence[int]) -> float:
    """Mean over positions of -log p(target token), floored at 1e-12."""
    probs = np.asarray(probs)
    picked = probs[np.arange(len(target)), np.asarray(target)]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def batch_caption_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    b, L, _ = probs.shape
    picked = probs[np.arange(b)[:, None], np.arange(L)[None, :], targets]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def objective(params: ToyModelParams, images, targets, topo: TopoConfig) -> tuple[float, float, float]:
    """``(J_cap, R_topo, J_tau)`` on one batch."""
    sheets, _, probs = forward_batch(params, images)
    j_cap = batch_caption_loss(probs, np.asarray(targets))
    r = topo_reg.r_topo(sheets, topo)
    return j_cap, r, topo_reg.total_loss(j_cap, r, topo.tau)


def objective_and_grad(params: ToyModelParams, images, targets, topo: TopoConfig):
    """Objective values and the exact gradient of ``J_tau`` for every parameter.

    The probability floor is ignored in the gradient (it only binds when a
    target probability underflows 1e-12).
    """
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    targets = np.asarray(targets)
    b = len(x)
    L, V = params.caption_length, params.vocab_size
    sheets, _, probs = forward_batch(params, x)
    hidden = sheets.reshape(b, -1)
    j_cap = batch_caption_loss(probs, targets)
    r = topo_reg.r_topo(sheets, topo)
    j_tau = topo_reg.total_loss(j_cap, r, topo.tau)

    d_logits = probs.copy()
    d_logits[np.arange(b)[:, None], np.arange(L)[None, :], targets] -= 1.0
    d_logits /= b * L
    grads = {
        "decoder_weights": np.einsum("blv,bu->lvu", d_logits, hidden),
        "decoder_bias": d_logits.sum(axis=0),
    }
    d_hidden = np.einsum("blv,lvu->bu", d_logits, params.decoder_weights)
    if topo.tau != 0.0:
        d_hidden = d_hidden + topo.tau * topo_reg.r_topo_grad(sheets, topo).reshape(b, -1)
    d_pre = d_hidden * (1.0 - hidden**2)
    grads["encoder_weights"] = d_pre.T @ x
    grads["encoder_bias"] = d_pre.sum(axis=0)
    return (j_cap, r, j_tau), grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1.0
    batch_size: int = 8
    seed: int = 42
    topo: TopoConfig = field(default_factory=TopoConfig)

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def with_tau(self, tau: float) -> "TrainConfig":
        return replace(self, topo=replace(self.topo, tau=float(tau)))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "topo": {"tau": self.topo.tau, "sigma": self.topo.sigma, "epsilon": self.topo.epsilon},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        topo = TopoConfig(**data.pop("topo", {}))
        return cls(**data, topo=topo)


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    j_cap: float
    r_topo: float
    j_tau: float
    val_j_cap: float | None = None


def _stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    from .data import encode_caption

    images = np.stack([scene.image for scene, _ in pairs])
    targets = np.stack([encode_caption(tokens) for _, tokens in pairs])
    return images, targets


def train(
    params: ToyModelParams,
    train_pairs: Sequence,
    config: TrainConfig,
    validation_pairs: Sequence = (),
) -> tuple[ToyModelParams, list[TraceRow]]:
    """Mini-batch gradient descent on ``J_cap + tau * R_topo``.

    ``train_pairs`` are ``(scene, caption_tokens)`` tuples. The trace holds one
    row for the untrained model (epoch 0) and one per epoch, each evaluated on
    the full training set after the epoch's updates.
    """
    if not train_pairs:
        raise ValueError("training set is empty")
    params = params.copy()
    images, targets = _stack(train_pairs)
    val = _stack(validation_pairs) if validation_pairs else None
    n = len(images)

    def snapshot(epoch: int) -> TraceRow:
        j_cap, r, j_tau = objective(params, images, targets, config.topo)
        if not math.isfinite(j_tau):
            raise DivergenceError(f"J_tau became non-finite at epoch {epoch}")
        val_cap = None
        if val is not None:
            val_cap, _, _ = objective(params, val[0], val[1], TopoConfig(0.0, config.topo.sigma))
        return TraceRow(epoch, j_cap, r, j_tau, val_cap)

    trace = [snapshot(0)]
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([int(config.seed), epoch])).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            (_, _, j_tau), grads = objective_and_grad(params, images[idx], targets[idx], config.topo)
            if not math.isfinite(j_tau):
                raise DivergenceError(f"J_tau became non-finite during epoch {epoch}")
            for name, g in grads.items():
                getattr(params, name)[...] -= config.learning_rate * g
        if not params.all_finite():
            raise DivergenceError(f"parameters became non-finite during epoch {epoch}")
        trace.append(snapshot(epoch))
    return params, trace


def decode(scores: np.ndarray) -> str:
    ids = np.argmax(scores, axis=-1)
    tokens = [VOCAB[i] for i in ids]
    while tokens and tokens[-1] == PAD:
        tokens.pop()
    return " ".join(tokens)


def caption(params: ToyModelParams, image: np.ndarray) -> str:
    """Greedy caption: per-position argmax, lowest index on ties, trailing pads dropped."""
    _, logits, _ = forward(params, image)
    return decode(logits)


def caption_batch(params: ToyModelParams, images: np.ndarray) -> list[str]:
    _, logits, _ = forward_batch(params, images)
    return [decode(row) for row in logits]
