"""Toy image captioner and synthetic scene generator."""

from .data import (
    CAPTION_LENGTH,
    PAD,
    VOCAB,
    SyntheticScene,
    caption_text,
    caption_tokens,
    encode_caption,
    export_dataset,
    generate_dataset,
    render_scene,
    split_members,
)
from .model import (
    ToyModelParams,
    TraceRow,
    TrainConfig,
    caption,
    caption_batch,
    caption_loss,
    forward,
    forward_batch,
    init_params,
    objective,
    objective_and_grad,
    train,
    zero_params,
)
