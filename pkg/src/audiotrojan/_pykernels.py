"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

_EPS = np.finfo(np.float64).eps


def pv_stretch(mag, phase, time_steps, advance):
    """Phase-vocoder resynthesis at fractional frame positions.

    ``mag`` and ``phase`` are (frames, bins). Each output frame takes its
    magnitude by linear interpolation between the two neighbouring input
    frames and its phase from a running accumulator advanced by the measured
    instantaneous frequency of each bin.
    """
    mag = np.vstack([mag, np.zeros((1, mag.shape[1]))])
    phase = np.vstack([phase, np.zeros((1, phase.shape[1]))])
    two_pi = 2.0 * np.pi
    acc = phase[0].copy()
    out = np.empty((len(time_steps), mag.shape[1]), dtype=np.complex128)
    for t, step in enumerate(time_steps):
        i = int(np.floor(step))
        alpha = step - i
        m = (1.0 - alpha) * mag[i] + alpha * mag[i + 1]
        out[t] = m * np.cos(acc) + 1j * (m * np.sin(acc))
        d = phase[i + 1] - phase[i] - advance
        d = d - two_pi * np.floor(d / two_pi + 0.5)
        acc = acc + advance + d
    return out


def overlap_add(frames, window, hop):
    """Weighted overlap-add; also returns the summed squared window."""
    n_frames, n = frames.shape
    total = (n_frames - 1) * hop + n
    y = np.zeros(total)
    wsum = np.zeros(total)
    weighted = frames * window
    wsq = window * window
    for t in range(n_frames):
        start = t * hop
        y[start:start + n] += weighted[t]
        wsum[start:start + n] += wsq
    return y, wsum


def max_window_start(magnitude, length):
    """Start of the first length-``length`` window with the largest sum.

    Sums within the accumulated rounding bound of the maximum count as ties.
    """
    n = magnitude.shape[0]
    cum = np.empty(n + 1)
    cum[0] = 0.0
    np.cumsum(magnitude, out=cum[1:])
    sums = cum[length:] - cum[:n - length + 1]
    tol = 2.0 * (n + 1) * _EPS * cum[n]
    return int(np.flatnonzero(sums >= sums.max() - tol)[0])
