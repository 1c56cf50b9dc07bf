"""Post-norm transformer encoder with a hand-written backward pass.

The encoder sits behind a small protocol so a different implementation
(e.g. one loading pretrained weights) can be dropped in; the classifier
only needs ``encode`` and ``backward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from . import kernels as K
from .params import ModelParams


class NumericError(FloatingPointError):
    pass


@dataclass
class Batch:
    """Right-padded token ids plus the inclusive target span of every row."""

    ids: np.ndarray  # (B, T) int64
    lengths: np.ndarray  # (B,) int64
    starts: np.ndarray  # (B,)
    ends: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(inputs: Sequence, pad_id: int = 0, pad_to: int | None = None) -> Batch:
    """Stack tokenized inputs into one padded batch."""
    lengths = np.array([len(x.ids) for x in inputs], dtype=np.int64)
    T = max(int(lengths.max()), pad_to or 0)
    ids = np.full((len(inputs), T), pad_id, dtype=np.int64)
    for r, x in enumerate(inputs):
        ids[r, : len(x.ids)] = x.ids
    starts = np.array([x.target_tok_start for x in inputs], dtype=np.int64)
    ends = np.array([x.target_tok_end for x in inputs], dtype=np.int64)
    return Batch(ids, lengths, starts, ends)


class Encoder(Protocol):
    def encode(self, params: ModelParams, batch: Batch, train_mode: bool = False,
               rng: np.random.Generator | None = None) -> tuple[np.ndarray, Any]:
        """Return last-layer hidden states (B, T, h) and an opaque cache."""

    def backward(self, params: ModelParams, cache: Any, dhidden: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of all encoder tensors given d(loss)/d(hidden)."""

    def attention(self, cache: Any) -> list[np.ndarray]:
        """Per-layer attention probabilities, each (B, heads, T, T)."""


@dataclass
class _LayerCache:
    x_in: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    probs_d: np.ndarray
    attn_keep: np.ndarray | None
    ctx: np.ndarray
    x1: np.ndarray
    xhat1: np.ndarray
    rstd1: np.ndarray
    hpre: np.ndarray
    act_d: np.ndarray
    ffn_keep: np.ndarray | None
    xhat2: np.ndarray
    rstd2: np.ndarray
    scores: np.ndarray | None = None


@dataclass
class EncoderCache:
    batch: Batch
    xhat0: np.ndarray
    rstd0: np.ndarray
    layers: list[_LayerCache] = field(default_factory=list)


def _split_heads(x: np.ndarray, B: int, heads: int) -> np.ndarray:
    """(B*T, H) -> (B, heads, T, H/heads)"""
    BT, H = x.shape
    return x.reshape(B, BT // B, heads, H // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    """(B, heads, T, dh) -> (B*T, heads*dh)"""
    B, nh, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B * T, nh * dh)


def _keep_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = rng.random(shape, dtype=np.float32) >= rate
    return keep.astype(dtype) * dtype.type(1.0 / (1.0 - rate))


class TransformerEncoder:
    """Token + position embeddings, embedding layer norm, then ``layers`` blocks of
    multi-head self-attention and a GELU feed-forward, each followed by a
    residual connection and layer norm. Padded keys are excluded from
    attention, so appended padding does not change unpadded rows."""

    def __init__(self, keep_scores: bool = False):
        self.keep_scores = keep_scores

    def encode(self, params: ModelParams, batch: Batch, train_mode: bool = False,
               rng: np.random.Generator | None = None):
        cfg = params.config
        B, T = batch.ids.shape
        if T > cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max positions {cfg.max_positions}")
        if batch.ids.min() < 0 or batch.ids.max() >= cfg.vocab_size:
            raise ValueError(f"token id out of range for vocabulary of {cfg.vocab_size}")
        rate = cfg.dropout if train_mode else 0.0
        if rate > 0 and rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        dt = params.dtype
        P = params.tensors
        scale = dt.type(1.0 / np.sqrt(cfg.head_dim))

        emb = (P["embed.tok"][batch.ids] + P["embed.pos"][:T][None]).reshape(B * T, -1)
        x, xhat0, rstd0 = K.layernorm(emb, P["embed.ln.g"], P["embed.ln.b"])
        cache = EncoderCache(batch, xhat0, rstd0)
        for l in range(cfg.layers):
            p = f"layer{l}."
            x_in = x
            q = _split_heads(x @ P[p + "attn.wq"] + P[p + "attn.bq"], B, cfg.heads)
            k = _split_heads(x @ P[p + "attn.wk"] + P[p + "attn.bk"], B, cfg.heads)
            v = _split_heads(x @ P[p + "attn.wv"] + P[p + "attn.bv"], B, cfg.heads)
            scores = (q @ k.transpose(0, 1, 3, 2)) * scale
            probs = K.softmax_masked(scores, batch.lengths)
            attn_keep = _keep_mask(rng, probs.shape, rate, dt) if rate > 0 else None
            probs_d = probs * attn_keep if attn_keep is not None else probs
            ctx = _merge_heads(probs_d @ v)
            a = ctx @ P[p + "attn.wo"] + P[p + "attn.bo"]
            x1, xhat1, rstd1 = K.layernorm(x_in + a, P[p + "ln1.g"], P[p + "ln1.b"])
            hpre = x1 @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
            act = K.gelu(hpre)
            ffn_keep = _keep_mask(rng, act.shape, rate, dt) if rate > 0 else None
            act_d = act * ffn_keep if ffn_keep is not None else act
            f = act_d @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
            x, xhat2, rstd2 = K.layernorm(x1 + f, P[p + "ln2.g"], P[p + "ln2.b"])
            if not np.isfinite(x).all():
                raise NumericError(f"non-finite activations in encoder layer {l + 1}")
            cache.layers.append(_LayerCache(
                x_in, q, k, v, probs, probs_d, attn_keep, ctx, x1, xhat1, rstd1, hpre, act_d,
                ffn_keep, xhat2, rstd2, scores if self.keep_scores else None))
        x = x.reshape(B, T, -1)
        return x, cache

    def attention(self, cache: EncoderCache) -> list[np.ndarray]:
        return [lc.probs for lc in cache.layers]

    def backward(self, params: ModelParams, cache: EncoderCache,
                 dhidden: np.ndarray) -> dict[str, np.ndarray]:
        cfg = params.config
        P = params.tensors
        H = cfg.hidden
        scale = params.dtype.type(1.0 / np.sqrt(cfg.head_dim))
        grads: dict[str, np.ndarray] = {}
        B, T = cache.batch.ids.shape
        dx = dhidden.reshape(B * T, H)
        for l in reversed(range(cfg.layers)):
            p = f"layer{l}."
            c = cache.layers[l]
            dr2, grads[p + "ln2.g"], grads[p + "ln2.b"] = K.layernorm_backward(
                dx, c.xhat2, c.rstd2, P[p + "ln2.g"])
            grads[p + "ffn.w2"] = c.act_d.T @ dr2
            grads[p + "ffn.b2"] = dr2.sum(axis=0)
            dact = dr2 @ P[p + "ffn.w2"].T
            if c.ffn_keep is not None:
                dact = dact * c.ffn_keep
            dhpre = K.gelu_backward(c.hpre, dact)
            grads[p + "ffn.w1"] = c.x1.T @ dhpre
            grads[p + "ffn.b1"] = dhpre.sum(axis=0)
            dx1 = dr2 + dhpre @ P[p + "ffn.w1"].T
            dr1, grads[p + "ln1.g"], grads[p + "ln1.b"] = K.layernorm_backward(
                dx1, c.xhat1, c.rstd1, P[p + "ln1.g"])
            grads[p + "attn.wo"] = c.ctx.T @ dr1
            grads[p + "attn.bo"] = dr1.sum(axis=0)
            dctx = _split_heads(dr1 @ P[p + "attn.wo"].T, B, cfg.heads)
            dprobs_d = dctx @ c.v.transpose(0, 1, 3, 2)
            dv = c.probs_d.transpose(0, 1, 3, 2) @ dctx
            dprobs = dprobs_d * c.attn_keep if c.attn_keep is not None else dprobs_d
            dscores = K.softmax_backward(c.probs, dprobs) * scale
            dq = dscores @ c.k
            dk = dscores.transpose(0, 1, 3, 2) @ c.q
            dx = dr1
            for m, d in (("q", dq), ("k", dk), ("v", dv)):
                dm = _merge_heads(d)
                grads[p + f"attn.w{m}"] = c.x_in.T @ dm
                grads[p + f"attn.b{m}"] = dm.sum(axis=0)
                dx = dx + dm @ P[p + f"attn.w{m}"].T
        demb, grads["embed.ln.g"], grads["embed.ln.b"] = K.layernorm_backward(
            dx, cache.xhat0, cache.rstd0, P["embed.ln.g"])
        grads["embed.tok"] = _scatter_rows(cache.batch.ids.ravel(), demb, P["embed.tok"])
        dpos = np.zeros_like(P["embed.pos"])
        dpos[:T] = demb.reshape(B, T, H).sum(axis=0)
        grads["embed.pos"] = dpos
        return grads


def _scatter_rows(idx: np.ndarray, rows: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Sum ``rows`` into a zero matrix shaped like ``like`` at row indices ``idx``."""
    out = np.zeros_like(like)
    order = np.argsort(idx, kind="stable")
    uniq, first = np.unique(idx[order], return_index=True)
    out[uniq] = np.add.reduceat(rows[order], first, axis=0)
    return out
