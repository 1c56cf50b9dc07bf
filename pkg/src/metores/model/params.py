from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 4
    heads: int = 4
    ffn: int = 256
    max_positions: int = 256
    dropout: float = 0.1
    n_classes: int = 2

    def __post_init__(self):
        for f in ("vocab_size", "hidden", "layers", "heads", "ffn", "max_positions", "n_classes"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, _, v = line.partition("=")
            k = k.strip()
            if k in kinds:
                kw[k] = float(v) if k == "dropout" else int(v)
        return cls(**kw)


def _shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = cfg.hidden, cfg.ffn
    out = {
        "embed.tok": (cfg.vocab_size, h),
        "embed.pos": (cfg.max_positions, h),
        "embed.ln.g": (h,),
        "embed.ln.b": (h,),
    }
    for l in range(cfg.layers):
        p = f"layer{l}."
        for m in ("q", "k", "v", "o"):
            out[p + f"attn.w{m}"] = (h, h)
            out[p + f"attn.b{m}"] = (h,)
        out[p + "ln1.g"] = (h,)
        out[p + "ln1.b"] = (h,)
        out[p + "ffn.w1"] = (h, f)
        out[p + "ffn.b1"] = (f,)
        out[p + "ffn.w2"] = (f, h)
        out[p + "ffn.b2"] = (h,)
        out[p + "ln2.g"] = (h,)
        out[p + "ln2.b"] = (h,)
    out["head.w"] = (h, cfg.n_classes)
    out["head.b"] = (cfg.n_classes,)
    return out


@dataclass
class ModelParams:
    """Named weight tensors of the encoder and the classification head."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = _shapes(self.config)
        if list(expected) != list(self.tensors):
            missing = set(expected) ^ set(self.tensors)
            raise ValueError(f"parameter names do not match config: {sorted(missing)[:5]}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["head.w"].dtype

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit LN gains.

    Embedding tables use the hidden size as fan-in.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "g":
            t = np.ones(shape)
        elif len(shape) == 1:
            t = np.zeros(shape)
        else:
            fan_in = shape[1] if name.startswith("embed.") else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            t = rng.uniform(-bound, bound, size=shape)
        tensors[name] = t.astype(dtype)
    return ModelParams(cfg, tensors)
