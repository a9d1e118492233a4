"""numba vs numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--scale 1]

Both flavours are imported directly from ``hrpro.kernels`` so the env flag is
irrelevant here. The first numba call (compilation or cache load) is excluded.
Outputs of the two flavours are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from hrpro import kernels as K


def _time(fn, args, repeat):
    fn(*args)  # warm up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, atol=1e-9) for x, y in zip(a, b))


def workloads(scale, rng):
    T = 2000 * scale
    P = np.clip(np.convolve(rng.random(T), np.ones(9) / 9, mode="same"), 0, 1)
    th = np.linspace(0.0, 0.25, 11)
    starts, ends = K.threshold_runs_np(P, th, False)

    A = np.clip(np.convolve(rng.random(T), np.ones(15) / 10, mode="same"), 0, 1)
    pts = np.sort(rng.choice(T, size=T // 40, replace=False)).astype(np.int64)

    n = 400 * scale
    s = np.sort(rng.uniform(0, T, n))
    e = s + rng.uniform(1, 40, n)
    sc = rng.random(n)

    iou = K.iou_matrix_np(s[:300], e[:300], s[::3][:100].copy(), e[::3][:100].copy())
    order = np.argsort(-sc[:300], kind="stable")
    iou = np.ascontiguousarray(iou[order])

    mem = rng.standard_normal((20, 256))
    labels = rng.integers(0, 20, 5000 * scale).astype(np.int64)
    feats = rng.standard_normal((labels.size, 256))

    return {
        "threshold_runs": ((P, th, False), ()),
        "oic_scores": ((P, starts, ends, 0.25), ()),
        "pseudo_snippets": ((A, pts, 0.95, 0.1), ()),
        "iou_matrix": ((s, e, s.copy(), e.copy()), ()),
        "soft_nms": ((s, e, sc, 0.4, 1e-3), ()),
        "greedy_match": ((iou, 0.5), ()),
        "ema_rows": ((mem, labels, feats, 0.999), ("mem",)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)

    print(f"{'kernel':<16} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for name, (call, mutated) in workloads(args.scale, rng).items():
        f_np, f_nb = getattr(K, name + "_np"), getattr(K, name + "_nb")
        if mutated:  # in-place kernels get their own copy per flavour
            a_np = (call[0].copy(),) + call[1:]
            a_nb = (call[0].copy(),) + call[1:]
            f_np(*a_np), f_nb(*a_nb)
            ok = np.allclose(a_np[0], a_nb[0])
        else:
            a_np = a_nb = call
            ok = _same(f_np(*call), f_nb(*call))
        t_np = _time(f_np, a_np, args.repeat)
        t_nb = _time(f_nb, a_nb, args.repeat)
        print(f"{name:<16} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>7.1f}x  {ok}")


if __name__ == "__main__":
    main()
