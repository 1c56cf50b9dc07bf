"""Compare the numba and numpy kernel backends.

Times every encoder kernel on training-sized inputs, then one full
forward/backward/Adam step of the desk model, under both backends.

    python benchmarks/bench_kernels.py --repeat 20
"""
import argparse
import time

import numpy as np

from metores.model import ModelConfig, init_params, kernels as K, loss_and_grad, make_batch
from metores.synthetic import relocar_like
from metores.tokenizer import build_vocab
from metores.trainer import Adam, encode_all


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times) * 1e3


def kernel_cases(rng, B=32, T=22, H=64, heads=4, ffn=256):
    f32 = np.float32
    scores = rng.standard_normal((B, heads, T, T)).astype(f32)
    lengths = rng.integers(T // 2, T + 1, size=B)
    probs = K.softmax_masked_np(scores, lengths)
    dprobs = rng.standard_normal(probs.shape).astype(f32)
    x = rng.standard_normal((B * T, H)).astype(f32)
    g = np.ones(H, f32)
    b = np.zeros(H, f32)
    _, xhat, rstd = K.layernorm_np(x, g, b)
    hpre = rng.standard_normal((B * T, ffn)).astype(f32)
    return {
        "softmax_masked": lambda: K.softmax_masked(scores, lengths),
        "softmax_backward": lambda: K.softmax_backward(probs, dprobs),
        "layernorm": lambda: K.layernorm(x, g, b),
        "layernorm_backward": lambda: K.layernorm_backward(x, xhat, rstd, g),
        "gelu": lambda: K.gelu(hpre),
        "gelu_backward": lambda: K.gelu_backward(hpre, hpre),
    }


def train_step_case(batch_size=32):
    c = relocar_like(0)
    vocab = build_vocab(c.train, 300)
    params = init_params(ModelConfig(vocab_size=len(vocab)), seed=0)
    xs = encode_all(c.train[:batch_size], vocab, 256)
    batch = make_batch(xs)
    y = np.array([int(s.label) for s in c.train[:batch_size]])
    opt = Adam(params, 1e-3, 10_000)
    rng = np.random.default_rng(0)

    def step():
        _, grads = loss_and_grad(params, batch, y, train_mode=True, rng=rng)
        opt.step(params, grads)

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    prev = K.BACKEND
    try:
        cases = kernel_cases(rng)
        step = train_step_case()
        for name in list(cases) + ["train_step"]:
            t = {}
            for backend in ("numpy", "numba"):
                K.set_backend(backend)
                fn = step if name == "train_step" else cases[name]
                t[backend] = best_of(fn, args.repeat)
            rows.append((name, t["numpy"], t["numba"]))
    finally:
        K.set_backend(prev)

    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, a, b in rows:
        print(f"{name:<20} {a:>10.3f} {b:>10.3f} {a / b:>7.2f}x")


if __name__ == "__main__":
    main()
