"""Time the compiled and numpy GRU scan kernels on the same inputs.

    python benchmarks/bench_scan.py [--batch 128] [--steps 48] [--features 4] [--hidden 32]
"""

import argparse
import timeit

import numpy as np

from rdis import kernels


def make_inputs(B, T, D, H, seed=0):
    rng = np.random.default_rng(seed)
    m = (rng.random((B, T, D)) > 0.5).astype(float)
    x = rng.normal(size=(B, T, D)) * m
    W = rng.uniform(-0.2, 0.2, (D, 3 * H))
    U = rng.uniform(-0.2, 0.2, (H, 3 * H))
    b = np.zeros(3 * H)
    Wo = rng.uniform(-0.2, 0.2, (H, D))
    bo = np.zeros(D)
    return x, m, W, U, b, Wo, bo


def bench(backend, args, repeat, number):
    impl = kernels.get_backend(backend)
    hp, yh, cache = impl.scan_forward(*args, True)
    gh, gy = np.ones_like(hp), np.ones_like(yh)
    fwd = min(timeit.repeat(lambda: impl.scan_forward(*args, True), repeat=repeat, number=number)) / number
    bwd = min(timeit.repeat(lambda: impl.scan_backward(cache, gh, gy), repeat=repeat, number=number)) / number
    return fwd, bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--steps", type=int, default=48)
    ap.add_argument("--features", type=int, default=4)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    a = ap.parse_args()
    args = make_inputs(a.batch, a.steps, a.features, a.hidden)
    print(f"B={a.batch} T={a.steps} D={a.features} H={a.hidden}  allocator tuned: {kernels.ALLOCATOR_TUNED}")
    results = {}
    for name in ("python", "compiled"):
        try:
            results[name] = bench(name, args, a.repeat, a.number)
        except ImportError:
            print(f"{name:9s} unavailable")
            continue
        f, b = results[name]
        print(f"{name:9s} forward {1e3 * f:8.3f} ms   backward {1e3 * b:8.3f} ms")
    if len(results) == 2:
        (pf, pb), (cf, cb) = results["python"], results["compiled"]
        print(f"speedup   forward {pf / cf:8.2f}x     backward {pb / cb:8.2f}x")


if __name__ == "__main__":
    main()
