from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classifier import (
    AttentionTrace,
    extract_attention,
    forward,
    forward_batch,
    loss_and_grad,
    predict_proba,
    softmax,
    span_average,
    traces_from,
)
from .encoder import Batch, Encoder, NumericError, TransformerEncoder, make_batch
from .params import ModelConfig, ModelParams, init_params

__all__ = [
    "AttentionTrace",
    "Batch",
    "CheckpointError",
    "Encoder",
    "ModelConfig",
    "ModelParams",
    "NumericError",
    "TransformerEncoder",
    "extract_attention",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "loss_and_grad",
    "make_batch",
    "predict_proba",
    "save_checkpoint",
    "softmax",
    "span_average",
    "traces_from",
]
