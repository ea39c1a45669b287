"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--skip-train]

Prints one line per kernel with the median time for each backend and the
speedup, then the wall time of one generator training epoch per backend.
"""
from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from tagcast import kernels


def _cases(rng):
    B, H, T, d = 32, 4, 192, 8
    s = rng.normal(size=(B, H, T, T)) / np.sqrt(d)
    kb = np.where(rng.random((B, 1, 1, T)) < 0.1, -1e9, 0.0)
    pr = kernels._kernels_py.masked_softmax(s, kb, 1.0)
    dpr = rng.normal(size=pr.shape)
    u = rng.normal(size=(B * T, 64))
    _, t = kernels._kernels_py.gelu_forward(u)
    D = kernels.sq_distances(rng.normal(size=(300, 64)))
    P = kernels._kernels_py.conditional_affinities(D, 10.0)
    P = (P + P.T) / (2 * len(P))
    Y = rng.normal(size=(300, 2))
    return {
        "masked_softmax": lambda: kernels.masked_softmax(s, kb, 1.0),
        "softmax_backward": lambda: kernels.softmax_backward(pr, dpr, 1.0),
        "gelu_forward": lambda: kernels.gelu_forward(u),
        "gelu_backward": lambda: kernels.gelu_backward(u, t, u),
        "conditional_affinities": lambda: kernels.conditional_affinities(D, 10.0),
        "tsne_gradient": lambda: kernels.tsne_gradient(P, Y),
    }


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    cases = _cases(rng)
    print(f"{'kernel':24s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        times = {}
        for backend in ("python", "cython"):
            kernels.use_backend(backend)
            fn()
            times[backend] = 1e3 * float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))
        print(f"{name:24s} {times['python']:10.2f} {times['cython']:10.2f} "
              f"{times['python'] / times['cython']:8.2f}")


def bench_training() -> None:
    from tagcast.corpus import AssemblyOptions, Mode, generate_all_examples
    from tagcast.encoder import MaskedLMConfig, TrainHyper
    from tagcast.pipeline import corpus_vocabulary
    from tagcast.synth import SynthConfig, generate_community
    from tagcast.taggen import train_tag_generator

    users, _ = generate_community(SynthConfig(n_users=80, seed=0))
    umap = {u.user_id: u for u in users}
    vocab = corpus_vocabulary(users)
    examples = generate_all_examples(users)
    cfg = MaskedLMConfig(vocab_size=len(vocab), layers=2, hidden_dim=32, heads=4, max_len=192)
    opts = AssemblyOptions(Mode.FULL, pn=3, max_len=192)
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        t0 = time.perf_counter()
        train_tag_generator(umap, examples, opts, vocab, cfg, TrainHyper(epochs=1, seed=0))
        print(f"one training epoch ({backend}): {time.perf_counter() - t0:.2f} s")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    try:
        kernels.use_backend("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    bench_kernels(args.repeat)
    if not args.skip_train:
        bench_training()


if __name__ == "__main__":
    main()
