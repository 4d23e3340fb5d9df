"""Ground-truth multi-taxel audio generated from force traces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import kernels
from .dsp import AudioBuffer, DspConfig, default_frame_times
from .model import forward_response

DEFAULT_PEAK = 0.9


class SynthesisError(RuntimeError):
    """The generated mix violates its own clipping guarantee."""


@dataclass(frozen=True)
class ForceTrace:
    """Piecewise-linear force history of one taxel."""

    taxel_id: str
    time: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        f = np.asarray(self.force, dtype=float)
        if t.ndim != 1 or t.shape != f.shape or t.size < 2:
            raise ValueError(f"trace {self.taxel_id}: need at least two (time, force) samples")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"trace {self.taxel_id}: time must be strictly increasing")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ValueError(f"trace {self.taxel_id}: force must be finite and nonnegative")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "force", f)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.time[0]), float(self.time[-1])

    def __call__(self, t):
        return np.interp(t, self.time, self.force)


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = 44100
    noise_snr_db: float | None = None
    loudness: float = 0.75
    seed: int = 0
    peak: float = DEFAULT_PEAK

    def __post_init__(self):
        if self.sample_rate < 8000:
            raise ValueError("sample_rate must be at least 8000 Hz")
        if not self.loudness > 0:
            raise ValueError("loudness must be positive")
        if not 0 < self.peak <= 1:
            raise ValueError("peak must lie in (0, 1]")


def _common_span(traces) -> tuple[float, float]:
    t0 = max(tr.span[0] for tr in traces)
    t1 = min(tr.span[1] for tr in traces)
    if not t1 > t0:
        raise ValueError("traces do not share a common time span")
    return t0, t1


def _match(traces, array):
    by_id = {tr.taxel_id: tr for tr in traces}
    if len(by_id) != len(traces):
        raise ValueError("duplicate trace ids")
    ids = {tx.id for tx in array}
    if set(by_id) != ids:
        raise ValueError(f"traces {sorted(by_id)} do not match taxels {sorted(ids)}")
    return [(tx, by_id[tx.id]) for tx in sorted(array, key=lambda tx: tx.id)]


def synthesize_components(traces, array, cfg: SynthConfig = SynthConfig()) -> dict[str, np.ndarray]:
    """Un-normalized per-taxel oscillator signals keyed by taxel id."""
    traces = list(traces)
    array = list(array)
    if not traces:
        raise ValueError("no force traces")
    t0, t1 = _common_span(traces)
    n = int(np.floor((t1 - t0) * cfg.sample_rate))
    t = t0 + np.arange(n) / cfg.sample_rate
    out = {}
    for tx, tr in _match(traces, array):
        freq, amp = forward_response(tx, tr(t))
        phase = kernels.accumulate_phase(np.ascontiguousarray(freq, dtype=np.float64),
                                         float(cfg.sample_rate), 0.0)
        out[tx.id] = cfg.loudness * np.asarray(amp) * np.sin(phase)
    return out


def mix(components: dict[str, np.ndarray], peak: float = DEFAULT_PEAK) -> np.ndarray:
    """Sum in taxel-id order, attenuated only when the sum would exceed ``peak``."""
    keys = sorted(components)
    total = np.zeros_like(components[keys[0]])
    for k in keys:
        total = total + components[k]
    top = float(np.max(np.abs(total))) if total.size else 0.0
    if top > peak:
        total = total * (peak / top)
    return total


def add_noise(audio: AudioBuffer, snr_db: float | None, seed: int = 0) -> AudioBuffer:
    """White Gaussian noise at ``snr_db`` relative to the signal RMS.

    The noisy result is rescaled only if it would leave [-1, 1].
    """
    if snr_db is None or np.isposinf(snr_db):
        return audio
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    x = audio.samples
    rms = float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape[0]) * rms * 10.0 ** (-snr_db / 20.0)
    y = x + noise
    top = float(np.max(np.abs(y))) if y.size else 0.0
    if top > 1.0:
        y = y / top
    return AudioBuffer(y, audio.sample_rate)


def synthesize(traces, array, cfg: SynthConfig = SynthConfig()) -> AudioBuffer:
    """Normalized mix of all taxels, with noise if ``cfg.noise_snr_db`` is set."""
    total = mix(synthesize_components(traces, array, cfg), cfg.peak)
    if total.size and np.max(np.abs(total)) > cfg.peak * (1 + 1e-12):
        raise SynthesisError("mix exceeds the normalization peak")
    return add_noise(AudioBuffer(total, cfg.sample_rate), cfg.noise_snr_db, cfg.seed)


@dataclass
class GroundTruth:
    """Per-frame reference values on the analysis frame clock."""

    times: np.ndarray
    force: dict[str, np.ndarray]
    freq: dict[str, np.ndarray]
    amplitude: dict[str, np.ndarray]


def ground_truth(traces, array, n_samples: int, sample_rate: int = 44100,
                 dsp: DspConfig = DspConfig()) -> GroundTruth:
    """Forward-model force, frequency and amplitude at each frame centre."""
    traces = list(traces)
    t0, _ = _common_span(traces)
    times = default_frame_times(n_samples, sample_rate, dsp)
    gt = GroundTruth(times, {}, {}, {})
    for tx, tr in _match(traces, list(array)):
        F = tr(t0 + times)
        f, a = forward_response(tx, F)
        gt.force[tx.id] = np.minimum(F, tx.force_defl.F_max)
        gt.freq[tx.id] = np.asarray(f)
        gt.amplitude[tx.id] = np.asarray(a)
    return gt
