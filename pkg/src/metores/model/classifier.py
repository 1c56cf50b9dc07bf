"""Span-pooled classification on top of an encoder.

The target's last-layer token vectors are averaged into one vector, which
a linear layer maps to class scores.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..tokenizer import TokenizedInput
from .encoder import Batch, Encoder, NumericError, TransformerEncoder, make_batch
from .params import ModelParams

DEFAULT_ENCODER = TransformerEncoder()


def span_average(hidden: np.ndarray, i: int, j: int) -> np.ndarray:
    """Column means of rows ``i..j`` (inclusive) of a framed ``seq x h`` matrix."""
    seq = hidden.shape[0]
    if not 1 <= i <= j < seq - 1:
        raise ValueError(f"span ({i},{j}) must lie strictly inside the framing of {seq} rows")
    return hidden[i:j + 1].mean(axis=0, keepdims=True)


def _pool(hidden: np.ndarray, batch: Batch) -> np.ndarray:
    B, T, H = hidden.shape
    pos = np.arange(T)[None, :]
    sel = (pos >= batch.starts[:, None]) & (pos <= batch.ends[:, None])
    bad = (batch.starts < 1) | (batch.ends >= batch.lengths - 1) | (batch.starts > batch.ends)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise ValueError(f"row {r}: target span touches the framing tokens")
    w = sel.astype(hidden.dtype) / (batch.ends - batch.starts + 1)[:, None].astype(hidden.dtype)
    return np.einsum("bt,bth->bh", w, hidden), w


@dataclass
class AttentionTrace:
    """Target attention per layer and head for one input.

    ``mass[l, h]`` is the attention weight placed on the target token(s),
    summed over target positions and averaged over all non-padding query
    positions. ``probs`` keeps the full per-layer matrices (heads, n, n).
    """

    mass: np.ndarray  # (layers, heads)
    probs: list[np.ndarray]
    target: tuple[int, int]
    scores: list[np.ndarray] | None = None

    @property
    def n_layers(self) -> int:
        return self.mass.shape[0]


def _target_mass(probs: np.ndarray, batch: Batch) -> np.ndarray:
    """(B, heads) mass on each row's target, averaged over real query rows."""
    B, nh, T, _ = probs.shape
    pos = np.arange(T)
    tgt = (pos[None, :] >= batch.starts[:, None]) & (pos[None, :] <= batch.ends[:, None])
    qry = pos[None, :] < batch.lengths[:, None]
    on_target = np.einsum("bhqk,bk->bhq", probs, tgt.astype(probs.dtype))
    return (on_target * qry[:, None, :]).sum(axis=-1) / batch.lengths[:, None]


def traces_from(encoder: Encoder, cache, batch: Batch, keep_probs: bool = False) -> list[AttentionTrace]:
    layers = encoder.attention(cache)
    masses = np.stack([_target_mass(p, batch) for p in layers], axis=1)  # (B, L, heads)
    out = []
    for b in range(batch.size):
        n = int(batch.lengths[b])
        probs = [p[b, :, :n, :n].copy() for p in layers] if keep_probs else []
        scores = None
        if keep_probs and getattr(cache.layers[0], "scores", None) is not None:
            scores = [lc.scores[b, :, :n, :n].copy() for lc in cache.layers]
        out.append(AttentionTrace(masses[b], probs, (int(batch.starts[b]), int(batch.ends[b])),
                                  scores))
    return out


def extract_attention(trace: AttentionTrace) -> np.ndarray:
    """One value per layer: the head-averaged target attention."""
    return trace.mass.mean(axis=1)


def forward_batch(params: ModelParams, batch: Batch, train_mode: bool = False,
                  rng: np.random.Generator | None = None, encoder: Encoder | None = None):
    """Class scores (B, classes), hidden states and the encoder cache."""
    encoder = encoder or DEFAULT_ENCODER
    hidden, cache = encoder.encode(params, batch, train_mode, rng)
    pooled, _ = _pool(hidden, batch)
    logits = pooled @ params["head.w"] + params["head.b"]
    if not np.isfinite(logits).all():
        raise NumericError("non-finite class scores in classification head")
    return logits, hidden, cache


def forward(params: ModelParams, inp: TokenizedInput, train_mode: bool = False,
            rng: np.random.Generator | None = None, encoder: Encoder | None = None):
    """Single-input forward pass returning (scores[classes], hidden[seq x h], trace)."""
    encoder = encoder or DEFAULT_ENCODER
    batch = make_batch([inp])
    logits, hidden, cache = forward_batch(params, batch, train_mode, rng, encoder)
    trace = traces_from(encoder, cache, batch, keep_probs=True)[0]
    return logits[0], hidden[0], trace


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(params: ModelParams, inputs: Sequence[TokenizedInput], batch_size: int = 128,
                  encoder: Encoder | None = None) -> np.ndarray:
    """Class probabilities for every input, evaluated in fixed-order batches."""
    out = []
    for s in range(0, len(inputs), batch_size):
        logits, _, _ = forward_batch(params, make_batch(inputs[s:s + batch_size]),
                                     encoder=encoder)
        out.append(softmax(logits.astype(np.float64)))
    if not out:
        return np.zeros((0, params.config.n_classes))
    return np.concatenate(out)


def loss_and_grad(params: ModelParams, inputs: Sequence[TokenizedInput] | Batch,
                  labels: Sequence[int], train_mode: bool = False,
                  rng: np.random.Generator | None = None, encoder: Encoder | None = None):
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    if len(labels) == 0:
        raise ValueError("empty batch")
    encoder = encoder or DEFAULT_ENCODER
    batch = inputs if isinstance(inputs, Batch) else make_batch(inputs)
    hidden, cache = encoder.encode(params, batch, train_mode, rng)
    pooled, w = _pool(hidden, batch)
    logits = pooled @ params["head.w"] + params["head.b"]
    y = np.asarray(labels, dtype=np.int64)
    B = len(y)
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), y]))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    dlogits = softmax(z)
    dlogits[np.arange(B), y] -= 1
    dlogits /= B
    dlogits = dlogits.astype(params.dtype)
    grads = {"head.w": pooled.T @ dlogits, "head.b": dlogits.sum(axis=0)}
    dpooled = dlogits @ params["head.w"].T
    dhidden = w[:, :, None] * dpooled[:, None, :]
    grads.update(encoder.backward(params, cache, dhidden))
    return loss, {name: grads[name] for name in params.tensors}
