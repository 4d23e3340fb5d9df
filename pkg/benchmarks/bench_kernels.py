"""Compare the numba and numpy kernel backends on realistic input sizes.

Run with ``python3 benchmarks/bench_kernels.py``.  Each kernel is called once
to trigger compilation, then timed with :mod:`timeit`; the table shows the best
of several repeats and the numpy/numba speed ratio.
"""
import argparse
import timeit

import numpy as np

from tubetac._accel import NUMBA_KERNELS, NUMPY_KERNELS

SR = 44100


def cases(rng):
    # one minute of audio, the demo's frame count and a 200 Hz band on the 2.5 Hz grid
    audio = rng.uniform(-0.5, 0.5, 60 * SR)
    freq = 1300 + 50 * np.sin(np.arange(60 * SR) / SR)
    score = rng.random((1500, 81))
    frame = rng.random(81)
    acc = rng.random(81)
    walk = np.cumsum(rng.normal(size=5000))
    return {
        "ridge_viterbi": lambda k: k.ridge_viterbi(score, 2.5, 0.01),
        "ridge_online_step": lambda k: k.ridge_online_step(acc, frame, 2.5, 0.01),
        "block_max": lambda k: k.block_max(audio, 1000),
        "max_drop": lambda k: k.max_drop(walk),
        "accumulate_phase": lambda k: k.accumulate_phase(freq, float(SR), 0.0),
    }


def best_time(fn, kernels, repeat, number):
    fn(kernels)
    return min(timeit.repeat(lambda: fn(kernels), repeat=repeat, number=number)) / number


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=3)
    args = p.parse_args(argv)
    if NUMBA_KERNELS is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        t_np = best_time(fn, NUMPY_KERNELS, args.repeat, args.number)
        t_nb = best_time(fn, NUMBA_KERNELS, args.repeat, args.number)
        print(f"{name:<20}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
