"""Compiled vs pure-Python keypoint kernels.

    python benchmarks/bench_kernels.py [--images 16] [--resolution 64] [--repeat 3]

Times descriptor extraction on synthetic sketches and descriptor matching on
random sets, once per available backend, and checks both give the same answer.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from asgan import _kernels
from asgan.data import synthetic_dataset
from asgan.metrics.matching import match_count
from asgan.metrics.sift import SiftExtractor


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=16)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--descriptors", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    imgs = [t.y for t in synthetic_dataset(args.images, args.resolution, seed=1)]
    rng = np.random.default_rng(0)
    a = rng.random((args.descriptors, 128))
    b = np.vstack([a[: args.descriptors // 2] + 0.01 * rng.random((args.descriptors // 2, 128)),
                   rng.random((args.descriptors - args.descriptors // 2, 128))])

    rows, results = [], {}
    for name in _kernels.available():
        ext = SiftExtractor(backend=name)
        t_ext, sets = _best(lambda: [ext(im) for im in imgs], args.repeat)
        t_match, n = _best(lambda: match_count(a, b, backend=name), args.repeat)
        results[name] = ([s.descriptors for s in sets], n)
        rows.append((name, t_ext, t_match))

    print(f"{'backend':<8} {'extract (s)':>12} {'match (s)':>10}")
    for name, t_ext, t_match in rows:
        print(f"{name:<8} {t_ext:12.4f} {t_match:10.4f}")
    if len(rows) == 2:
        (_, e0, m0), (_, e1, m1) = sorted(rows, key=lambda r: r[0] != "python")
        print(f"speedup  {e0 / e1:12.2f}x {m0 / m1:9.2f}x")
        (d0, n0), (d1, n1) = results.values()
        same = n0 == n1 and all(x.shape == y.shape and np.allclose(x, y, atol=1e-12)
                                for x, y in zip(d0, d1))
        print("outputs identical:", same)


if __name__ == "__main__":
    main()
