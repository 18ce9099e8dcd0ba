"""Compare the compiled LSTM kernel with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each row times one forward pass and one loss-and-gradient pass for a batch
shape, reporting the best of ``--repeat`` runs per backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from vpmeta import kernels

# (label, batch, sequence length, input dim, hidden dim, output dim)
SHAPES = [
    ("online adapt, vd H=32", 1, 100, 3, 32, 3),
    ("online adapt, vd H=128", 1, 100, 3, 128, 3),
    ("online adapt, pa H=128", 1, 100, 1, 128, 1),
    ("meta batch, vd H=32", 16, 100, 3, 32, 3),
    ("meta batch, vd H=128", 16, 100, 3, 128, 3),
    ("replay, vd H=128", 512, 100, 3, 128, 3),
]


def _inputs(B, S, I, H, O, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.uniform(-0.1, 0.1, size=(I + H + 1, 4 * H))
    V = rng.uniform(-0.1, 0.1, size=(H + 1, O))
    return W, V, rng.normal(size=(B, S, I)), rng.normal(size=(B, O))


def _best(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the numpy fallback is available")
    print(f"{'shape':<24} {'pass':<9} " + " ".join(f"{name:>12}" for name in backends) + f" {'speedup':>8}")
    for label, B, S, I, H, O in SHAPES:
        W, V, X, Y = _inputs(B, S, I, H, O)
        for kind in ("forward", "gradient"):
            times = {}
            for name, (fwd, grad) in backends.items():
                call = (lambda f=fwd: f(W, V, X)) if kind == "forward" else (lambda g=grad: g(W, V, X, Y))
                times[name] = _best(call, args.repeat)
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            cells = " ".join(f"{1e3 * t:>10.3f}ms" for t in times.values())
            print(f"{label:<24} {kind:<9} {cells} {speed:>7.1f}x")


if __name__ == "__main__":
    main()
