"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Sizes resemble one training step at d=10 (500 observations, 100 draws), one
evaluation pass and one Gibbs sweep.  The first numba call (compilation) is
excluded.
"""
import argparse
import timeit

import numpy as np

from mnpcvi import _accel, kernels


def cases(scale, rng):
    m, L, d = int(500 * scale), 100, 10
    u = rng.standard_normal((m, L, d))
    g = rng.gumbel(size=u.shape)
    y = rng.integers(0, d, m)
    yield "surrogate_ce", (u, g, y, 0.1, kernels.COMBINED)

    n, R, k = int(20_000 * scale), 2000, 9
    yield "choice_counts", (rng.standard_normal((n, k)), rng.standard_normal((R, k)))

    q = int(200_000 * scale)
    lo = rng.standard_normal(q)
    yield "trunc_normal", (rng.standard_normal(q), np.ones(q), lo, lo + rng.uniform(0, 2, q),
                           rng.random(q))

    n, k = int(5000 * scale), 2
    ys = rng.integers(0, k + 1, n)
    du = np.full((n, k), -0.5)
    du[ys > 0, ys[ys > 0] - 1] = 0.5
    prec = np.array([[1.3, -0.4], [-0.4, 0.9]])
    yield "gibbs_latent_sweep", (du, rng.standard_normal((n, k)), prec, ys, rng.random((n, k)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, inputs in cases(args.scale, rng):
        fast, slow = kernels.implementations(name)
        # the sweep updates its first argument in place
        fresh = (lambda: (inputs[0].copy(),) + inputs[1:]) if name == "gibbs_latent_sweep" \
            else (lambda: inputs)
        fast(*fresh())
        t_np = min(timeit.repeat(lambda: slow(*fresh()), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast(*fresh()), number=1, repeat=args.repeat))
        print(f"{name:<20}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
    print(f"numba threads: {_accel.numba.get_num_threads()}")


if __name__ == "__main__":
    main()
