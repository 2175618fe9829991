"""Time the compiled and numpy kernel backends on model-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Also times one segmenter training epoch under each backend in a
subprocess, since the backend is chosen once at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from woundseg import kernels

EPOCH = """
import time, numpy as np
from woundseg.nn.train import SampleSet, TrainConfig, train_segmenter
from woundseg.detpost import PostprocessParams
from woundseg.data.augment import NO_AUGMENT
rng = np.random.default_rng(0)
x = rng.random((64, 32, 32, 3)).astype(np.float32)
s = SampleSet(x, (x[..., 0] > .7).astype(np.uint8))
t = time.perf_counter()
train_segmenter(s, s, None, TrainConfig(max_epochs=2), NO_AUGMENT, params=PostprocessParams(output_size=32))
print((time.perf_counter() - t) / 2)
"""


def cases(rng):
    x = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    cols_shape = (8, 16 * 9, 32 * 32)
    cols = rng.standard_normal(cols_shape).astype(np.float32)
    d_pool = rng.standard_normal((8, 16, 16, 16)).astype(np.float32)
    return {
        "im2col3": lambda k: k.im2col3(x),
        "col2im3": lambda k: k.col2im3(cols, 16, 32, 32),
        "maxpool2_fwd": lambda k: k.maxpool2_fwd(x),
        "maxpool2_bwd": lambda k, idx=kernels._pykernels.maxpool2_fwd(x)[1]: k.maxpool2_bwd(d_pool, idx),
        "upsample2_fwd": lambda k: k.upsample2_fwd(d_pool),
        "upsample2_bwd": lambda k: k.upsample2_bwd(x),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = kernels.backends()
    rng = np.random.default_rng(0)
    results = {}
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(rng).items():
        row = {}
        for b, mod in backends.items():
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            row[b] = min(t.repeat(args.repeat, n)) / n * 1e3
        results[name] = row
        speed = f"{row['python'] / row['cython']:.2f}x" if "cython" in row else "-"
        print(f"{name:<16}" + "".join(f"{row[b]:>10.3f}ms" for b in backends) + f"{speed:>10}")
    epoch = {}
    for b in backends:
        env = {**os.environ, "WOUNDSEG_KERNELS": b}
        out = subprocess.run([sys.executable, "-c", EPOCH], env=env, capture_output=True, text=True, check=True)
        epoch[b] = float(out.stdout.strip()) * 1e3
    results["train_epoch_64x32px"] = epoch
    speed = f"{epoch['python'] / epoch['cython']:.2f}x" if "cython" in epoch else "-"
    print(f"{'train epoch':<16}" + "".join(f"{epoch[b]:>10.1f}ms" for b in backends) + f"{speed:>10}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
