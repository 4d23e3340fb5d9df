"""Hot loops with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``TUBETAC_NUMBA=0`` to force
the numpy implementations (useful for debugging and for the benchmark).
Both backends are importable directly through :data:`NUMPY_KERNELS` and
:data:`NUMBA_KERNELS` so they can be compared side by side.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _ridge_viterbi_np(score, bin_hz, penalty):
    n_frames, n_bins = score.shape
    path = np.zeros(n_frames, dtype=np.int64)
    if n_frames == 0:
        return path
    if penalty == 0.0:
        return np.argmax(score, axis=1).astype(np.int64)
    idx = np.arange(n_bins)
    jump = penalty * (bin_hz * (idx[:, None] - idx[None, :])) ** 2
    back = np.zeros((n_frames, n_bins), dtype=np.int64)
    acc = score[0].copy()
    for t in range(1, n_frames):
        # cand[j, i]: arrive at bin j from bin i
        cand = acc[None, :] - jump
        best = np.argmax(cand, axis=1)
        back[t] = best
        acc = cand[idx, best] + score[t]
    path[-1] = np.argmax(acc)
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _ridge_online_step_np(acc, frame, bin_hz, penalty):
    n_bins = acc.shape[0]
    idx = np.arange(n_bins)
    jump = penalty * (bin_hz * (idx[:, None] - idx[None, :])) ** 2
    cand = acc[None, :] - jump
    best = np.argmax(cand, axis=1)
    return cand[idx, best] + frame


def _block_max_np(x, block):
    n = x.shape[0]
    n_blocks = -(-n // block)
    padded = np.zeros(n_blocks * block, dtype=np.float64)
    padded[:n] = np.abs(x)
    return padded.reshape(n_blocks, block).max(axis=1)


def _max_drop_np(values):
    """Largest amount by which a value falls below the running maximum."""
    if values.shape[0] == 0:
        return 0.0
    return float(np.max(np.maximum.accumulate(values) - values))


def _accumulate_phase_np(freq, sample_rate, phase0):
    inc = TWO_PI * np.asarray(freq, dtype=np.float64) / sample_rate
    phase = phase0 + np.concatenate(([0.0], np.cumsum(inc[:-1])))
    return np.mod(phase, TWO_PI)


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    ridge_viterbi=_ridge_viterbi_np,
    ridge_online_step=_ridge_online_step_np,
    block_max=_block_max_np,
    max_drop=_max_drop_np,
    accumulate_phase=_accumulate_phase_np,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def ridge_viterbi(score, bin_hz, penalty):
        n_frames, n_bins = score.shape
        path = np.zeros(n_frames, dtype=np.int64)
        if n_frames == 0:
            return path
        if penalty == 0.0:
            for t in range(n_frames):
                path[t] = np.argmax(score[t])
            return path
        back = np.zeros((n_frames, n_bins), dtype=np.int64)
        acc = score[0].copy()
        nxt = np.empty(n_bins)
        for t in range(1, n_frames):
            for j in range(n_bins):
                best_i = 0
                best_v = -np.inf
                for i in range(n_bins):
                    d = bin_hz * (j - i)
                    v = acc[i] - penalty * d * d
                    if v > best_v:
                        best_v = v
                        best_i = i
                back[t, j] = best_i
                nxt[j] = best_v + score[t, j]
            acc[:] = nxt
        path[n_frames - 1] = np.argmax(acc)
        for t in range(n_frames - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
        return path

    @njit(cache=True)
    def ridge_online_step(acc, frame, bin_hz, penalty):
        n_bins = acc.shape[0]
        out = np.empty(n_bins)
        for j in range(n_bins):
            best_v = -np.inf
            for i in range(n_bins):
                d = bin_hz * (j - i)
                v = acc[i] - penalty * d * d
                if v > best_v:
                    best_v = v
            out[j] = best_v + frame[j]
        return out

    @njit(cache=True)
    def block_max(x, block):
        n = x.shape[0]
        n_blocks = (n + block - 1) // block
        out = np.zeros(n_blocks)
        for b in range(n_blocks):
            m = 0.0
            stop = min(n, (b + 1) * block)
            for k in range(b * block, stop):
                v = abs(x[k])
                if v > m:
                    m = v
            out[b] = m
        return out

    @njit(cache=True)
    def max_drop(values):
        worst = 0.0
        if values.shape[0] == 0:
            return worst
        run = values[0]
        for k in range(values.shape[0]):
            v = values[k]
            if v > run:
                run = v
            elif run - v > worst:
                worst = run - v
        return worst

    @njit(cache=True)
    def accumulate_phase(freq, sample_rate, phase0):
        n = freq.shape[0]
        out = np.empty(n)
        ph = phase0 % TWO_PI
        for k in range(n):
            out[k] = ph
            ph += TWO_PI * freq[k] / sample_rate
            if ph >= TWO_PI:
                ph -= TWO_PI * np.floor(ph / TWO_PI)
        return out

    return SimpleNamespace(
        name="numba",
        ridge_viterbi=ridge_viterbi,
        ridge_online_step=ridge_online_step,
        block_max=block_max,
        max_drop=max_drop,
        accumulate_phase=accumulate_phase,
    )


def _numba_requested() -> bool:
    return os.environ.get("TUBETAC_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


try:
    NUMBA_KERNELS = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_KERNELS = None

if NUMBA_KERNELS is not None and _numba_requested():
    kernels = NUMBA_KERNELS
else:
    kernels = NUMPY_KERNELS

BACKEND = kernels.name
