"""Row-wise kernels for the encoder: masked softmax, layer norm, GELU.

Each kernel has a numba implementation and a numpy implementation with
the same signature. The numba path is used when numba imports and
``METORES_DISABLE_NUMBA`` is unset (or ``0``); :func:`set_backend` switches
at runtime, which the tests and the benchmark use to compare both.
"""
from __future__ import annotations

import math
import os

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False


# --------------------------------------------------------------------------
# numpy reference implementations


def softmax_masked_np(scores: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Softmax over the last axis of ``scores`` (B, H, T, T), restricted to the
    first ``lengths[b]`` keys; masked keys get exactly zero probability."""
    T = scores.shape[-1]
    valid = np.arange(T)[None, :] < lengths[:, None]  # (B, T)
    valid = valid[:, None, None, :]
    s = np.where(valid, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward_np(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = (probs * dprobs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def layernorm_np(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def layernorm_backward_np(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray,
                          gamma: np.ndarray):
    h = xhat.shape[-1]
    flat_dy = dy.reshape(-1, h)
    flat_xhat = xhat.reshape(-1, h)
    dgamma = (flat_dy * flat_xhat).sum(axis=0)
    dbeta = flat_dy.sum(axis=0)
    g = dy * gamma
    dx = rstd * (g - g.mean(axis=-1, keepdims=True)
                 - xhat * (g * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def gelu_np(x: np.ndarray) -> np.ndarray:
    # x*x*x: float32 ``x ** 3`` takes numpy's slow pow path
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * (x * x * x))))


def gelu_backward_np(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


# --------------------------------------------------------------------------
# numba implementations

if NUMBA_AVAILABLE:

    @njit(cache=True, error_model="numpy")
    def _softmax_masked_nb(scores, lengths):
        B, H, T, _ = scores.shape
        out = np.zeros_like(scores)
        for b in range(B):
            n = lengths[b]
            for h in range(H):
                for i in range(T):
                    m = scores[b, h, i, 0]
                    for j in range(1, n):
                        if scores[b, h, i, j] > m:
                            m = scores[b, h, i, j]
                    tot = 0.0
                    for j in range(n):
                        e = math.exp(scores[b, h, i, j] - m)
                        out[b, h, i, j] = e
                        tot += e
                    for j in range(n):
                        out[b, h, i, j] = out[b, h, i, j] / tot
        return out

    @njit(cache=True, error_model="numpy")
    def _softmax_backward_nb(probs, dprobs):
        B, H, T, K = probs.shape
        out = np.empty_like(probs)
        for b in range(B):
            for h in range(H):
                for i in range(T):
                    inner = 0.0
                    for j in range(K):
                        inner += probs[b, h, i, j] * dprobs[b, h, i, j]
                    for j in range(K):
                        out[b, h, i, j] = probs[b, h, i, j] * (dprobs[b, h, i, j] - inner)
        return out

    @njit(cache=True, error_model="numpy")
    def _layernorm_nb(x2, gamma, beta, eps):
        R, h = x2.shape
        y = np.empty_like(x2)
        xhat = np.empty_like(x2)
        rstd = np.empty((R, 1), dtype=x2.dtype)
        for r in range(R):
            mu = 0.0
            for k in range(h):
                mu += x2[r, k]
            mu /= h
            var = 0.0
            for k in range(h):
                d = x2[r, k] - mu
                var += d * d
            var /= h
            rs = 1.0 / math.sqrt(var + eps)
            rstd[r, 0] = rs
            for k in range(h):
                xh = (x2[r, k] - mu) * rs
                xhat[r, k] = xh
                y[r, k] = xh * gamma[k] + beta[k]
        return y, xhat, rstd

    @njit(cache=True, error_model="numpy")
    def _layernorm_backward_nb(dy2, xhat2, rstd2, gamma):
        R, h = dy2.shape
        dx = np.empty_like(dy2)
        dgamma = np.zeros(h, dtype=dy2.dtype)
        dbeta = np.zeros(h, dtype=dy2.dtype)
        for r in range(R):
            m1 = 0.0
            m2 = 0.0
            for k in range(h):
                g = dy2[r, k] * gamma[k]
                m1 += g
                m2 += g * xhat2[r, k]
                dgamma[k] += dy2[r, k] * xhat2[r, k]
                dbeta[k] += dy2[r, k]
            m1 /= h
            m2 /= h
            rs = rstd2[r, 0]
            for k in range(h):
                g = dy2[r, k] * gamma[k]
                dx[r, k] = rs * (g - m1 - xhat2[r, k] * m2)
        return dx, dgamma, dbeta

    # 0.5 * (1 + tanh(u)) == 1 / (1 + exp(-2u)); scalar exp is much cheaper than tanh here.
    # Constants are cast to the input dtype so float32 inputs stay in single precision.
    @njit(cache=True, fastmath=True, error_model="numpy")
    def _gelu_nb(x1):
        out = np.empty_like(x1)
        c2 = x1.dtype.type(1.5957691216057308)
        a = x1.dtype.type(0.044715)
        one = x1.dtype.type(1.0)
        for k in range(x1.size):
            v = x1[k]
            out[k] = v / (one + math.exp(-c2 * (v + a * v * v * v)))
        return out

    @njit(cache=True, fastmath=True, error_model="numpy")
    def _gelu_backward_nb(x1, dy1):
        out = np.empty_like(x1)
        c2 = x1.dtype.type(1.5957691216057308)
        c = x1.dtype.type(0.7978845608028654)
        a = x1.dtype.type(0.044715)
        a3 = x1.dtype.type(3 * 0.044715)
        one = x1.dtype.type(1.0)
        two = x1.dtype.type(2.0)
        for k in range(x1.size):
            v = x1[k]
            s = one / (one + math.exp(-c2 * (v + a * v * v * v)))
            du = c * (one + a3 * v * v)
            out[k] = dy1[k] * (s + two * v * s * (one - s) * du)
        return out


def softmax_masked_nb(scores, lengths):
    return _softmax_masked_nb(np.ascontiguousarray(scores), lengths.astype(np.int64))


def softmax_backward_nb(probs, dprobs):
    return _softmax_backward_nb(np.ascontiguousarray(probs), np.ascontiguousarray(dprobs))


def layernorm_nb(x, gamma, beta):
    shape = x.shape
    y, xhat, rstd = _layernorm_nb(np.ascontiguousarray(x).reshape(-1, shape[-1]), gamma, beta,
                                  LN_EPS)
    return y.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1] + (1,))


def layernorm_backward_nb(dy, xhat, rstd, gamma):
    shape = dy.shape
    h = shape[-1]
    dx, dgamma, dbeta = _layernorm_backward_nb(
        np.ascontiguousarray(dy).reshape(-1, h), np.ascontiguousarray(xhat).reshape(-1, h),
        np.ascontiguousarray(rstd).reshape(-1, 1), gamma)
    return dx.reshape(shape), dgamma, dbeta


def gelu_nb(x):
    return _gelu_nb(np.ascontiguousarray(x).ravel()).reshape(x.shape)


def gelu_backward_nb(x, dy):
    return _gelu_backward_nb(np.ascontiguousarray(x).ravel(),
                             np.ascontiguousarray(dy).ravel()).reshape(x.shape)


# --------------------------------------------------------------------------
# backend selection

_NAMES = ("softmax_masked", "softmax_backward", "layernorm", "layernorm_backward",
          "gelu", "gelu_backward")

softmax_masked = softmax_masked_np
softmax_backward = softmax_backward_np
layernorm = layernorm_np
layernorm_backward = layernorm_backward_np
gelu = gelu_np
gelu_backward = gelu_backward_np
BACKEND = "numpy"


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous backend."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    prev = BACKEND
    g = globals()
    for fn in _NAMES:
        g[fn] = g[f"{fn}_{'nb' if name == 'numba' else 'np'}"]
    BACKEND = name
    return prev


def _env_disables_numba() -> bool:
    return os.environ.get("METORES_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


if NUMBA_AVAILABLE and not _env_disables_numba():
    set_backend("numba")
