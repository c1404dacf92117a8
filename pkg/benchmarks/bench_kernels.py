"""Compare the compiled and NumPy kernel backends.

Times each image kernel on the default network's shapes, then one full
per-sample-gradient DP step in a fresh interpreter per backend (the backend
is fixed at import). Run from the repository root:

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from superdp import kernels

STEP_SNIPPET = """
import json, timeit
import numpy as np
from superdp import dp, kernels, model
net = model.build_network(seed=0)
gen = np.random.default_rng(0)
x, y = gen.normal(size=(600, 1, 28, 28)), gen.integers(0, 10, 600)
def step():
    g, _ = model.per_sample_gradients(net, x, y, rng=gen)
    dp.noisy_aggregate(dp.clip_rows(g, 1.0), 1.1, 1.0, 600, gen)
step()
print(json.dumps({"backend": kernels.BACKEND, "seconds": min(timeit.repeat(step, number=1, repeat=REPEAT))}))
"""


def kernel_cases(gen):
    x1 = gen.normal(size=(64, 1, 28, 28))
    x2 = gen.normal(size=(64, 8, 12, 12))
    cols = gen.normal(size=(64, 8 * 25, 64))
    pool_in = gen.normal(size=(64, 16, 8, 8))
    return {
        "im2col conv1": lambda m: m.im2col(x1, 5, 5, 1, 0),
        "im2col conv2": lambda m: m.im2col(x2, 5, 5, 1, 0),
        "col2im conv2": lambda m: m.col2im(cols, (64, 8, 12, 12), 5, 5, 1, 0),
        "maxpool fwd": lambda m: m.maxpool2x2_forward(pool_in),
        "maxpool bwd": lambda m: m.maxpool2x2_backward(
            np.ones((64, 16, 4, 4)), np.zeros((64, 16, 4, 4), dtype=np.uint8), (64, 16, 8, 8)),
    }


def time_kernels(repeat):
    try:
        backends = {"cython": kernels.backend_module("cython")}
    except ImportError:
        backends = {}
        print("compiled backend not built; only the NumPy backend is timed")
    backends["python"] = kernels.backend_module("python")
    gen = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(gen).items():
        t = {b: min(timeit.repeat(lambda: fn(m), number=5, repeat=repeat)) / 5 for b, m in backends.items()}
        rows.append((name, t))
    return rows


def time_step(backend, repeat):
    env = dict(os.environ, SUPERDP_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.replace("REPEAT", str(repeat))],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    print(f"{'kernel':<16}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, t in time_kernels(args.repeat):
        cy, py = t.get("cython"), t["python"]
        cy_s = f"{cy * 1e3:12.3f}" if cy else f"{'-':>12}"
        ratio = f"{py / cy:9.1f}x" if cy else f"{'-':>10}"
        print(f"{name:<16}{cy_s}{py * 1e3:12.3f}{ratio}")

    print()
    print("one DP step, lot of 600 (per-sample grads, clip, noise):")
    for backend in ("cython", "python"):
        res = time_step(backend, args.repeat)
        print(f"  requested {backend:<7} active {res['backend']:<7} {res['seconds']:.3f} s")


if __name__ == "__main__":
    main()
