"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from audiotrojan import _pykernels

try:
    from audiotrojan import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    n_frames, n_bins = 63, 513
    mag = rng.uniform(0, 1, (n_frames, n_bins))
    phase = rng.uniform(-np.pi, np.pi, (n_frames, n_bins))
    steps = np.minimum(np.arange(84) / 1.3348, n_frames - 1)
    advance = 2 * np.pi * 256 * np.arange(n_bins) / 1024
    frames = rng.standard_normal((84, 1024))
    window = np.hanning(1024)
    energy = np.abs(rng.standard_normal(16000))
    return {
        "pv_stretch (1 s clip, +5 st)": lambda k: k.pv_stretch(mag, phase, steps, advance),
        "overlap_add (84 x 1024, hop 256)": lambda k: k.overlap_add(frames, window, 256),
        "max_window_start (16000, L=1600)": lambda k: k.max_window_start(energy, 1600),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args()

    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':<36}" + "".join(f"{name:>12}" for name, _ in impls) + ("   speedup" if _ckernels else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = []
        for _, impl in impls:
            best = min(timeit.repeat(lambda: fn(impl), number=args.number, repeat=args.repeat))
            times.append(best / args.number)
        row = f"{label:<36}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
