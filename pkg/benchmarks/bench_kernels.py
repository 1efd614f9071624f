"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one desk-scale training step under each backend.
"""
import argparse
import time

import numpy as np

from restoreformer import kernels
from restoreformer.model import HQGenerator, ModelConfig
from restoreformer.rng import Rng
from restoreformer.tensor import Tape, Tensor, ops


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = Rng(0)
    xp = rng.normal((4, 34, 34, 16))
    cols = kernels._fallback.im2col(xp, 3, 3, 1)
    z = rng.normal((4096, 32))
    book = rng.normal((64, 32))
    sq = (book ** 2).sum(1)
    x = rng.normal((4, 32, 32, 16))
    xhat, inv = kernels._fallback.group_norm_fwd(x, 8, 1e-6)
    g = rng.normal(x.shape)
    model = HQGenerator(ModelConfig(), seed=0)
    imgs = Tensor(rng.random((4, 32, 32, 3)))

    def step():
        with Tape() as tape:
            out = model(imgs)
            tape.backward(ops.l1_loss(imgs, out.image))
        model.store.zero_grad()

    return [
        ("im2col 4x34x34x16 k3", lambda: kernels.im2col(xp, 3, 3, 1)),
        ("col2im 4x34x34x16 k3", lambda: kernels.col2im(cols, 34, 34, 3, 3, 1)),
        ("nearest_code 4096x32 M=64", lambda: kernels.nearest_code(z, book, sq)),
        ("group_norm fwd 4x32x32x16", lambda: kernels.group_norm_fwd(x, 8, 1e-6)),
        ("group_norm bwd 4x32x32x16", lambda: kernels.group_norm_bwd(g, xhat, inv, 8)),
        ("stage-1 train step (desk)", step),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "native" not in backends:
        print("compiled kernels not built; timing the numpy fallback only")
    prev = kernels.BACKEND
    results = {}
    try:
        for b in backends:
            kernels.use_backend(b)
            for name, fn in cases():
                fn()  # warm-up
                results.setdefault(name, {})[b] = best_of(fn, args.repeat)
    finally:
        kernels.use_backend(prev)
    print(f"{'kernel':32s} {'python ms':>10s} {'native ms':>10s} {'speedup':>8s}")
    for name, r in results.items():
        py, nat = r["python"] * 1e3, r.get("native", np.nan) * 1e3
        print(f"{name:32s} {py:10.3f} {nat:10.3f} {py / nat:8.2f}x")


if __name__ == "__main__":
    main()
