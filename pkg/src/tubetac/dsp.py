"""Audio to per-band resonant frequency and amplitude at a 25 Hz frame clock.

The STFT uses a Hann window of ~186 ms zero-padded to the next power of two
(8192 -> 16384 samples at 44.1 kHz) with a hop of exactly one output period,
and its magnitudes are resampled onto a uniform 2.5 Hz grid by three-point
quadratic interpolation.  Magnitudes are scaled so that a sine of amplitude
``a`` peaks at ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import kernels

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_JUMP_PENALTY = 0.01


class EmptySpectrogramError(ValueError):
    """The audio is shorter than one analysis window."""


class BandError(ValueError):
    """A frequency band lies outside the analyzed grid."""


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("audio must be mono (1-D)")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if x.size and np.max(np.abs(x)) > 1.0:
            raise ValueError("audio samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrequencyBand:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"invalid band [{self.lo}, {self.hi}]")

    def contains(self, f) -> bool:
        return bool(self.lo <= f <= self.hi)

    def overlaps(self, other: FrequencyBand) -> bool:
        return self.lo < other.hi and other.lo < self.hi


@dataclass(frozen=True)
class DspConfig:
    bin_hz: float = 2.5
    out_rate_hz: float = 25.0
    window_ms: float = 8192 / 44.1
    jump_penalty: float = DEFAULT_JUMP_PENALTY
    envelope_block_ms: float = 1000 / 44.1
    envelope_smooth_blocks: int = 5

    def frame_params(self, sample_rate: int) -> tuple[int, int, int]:
        """``(window, hop, nfft)`` in samples for ``sample_rate``."""
        hop = int(round(sample_rate / self.out_rate_hz))
        window = int(round(self.window_ms * 1e-3 * sample_rate))
        window += window % 2
        nfft = 1 << math.ceil(math.log2(2 * window))
        return window, hop, nfft


@dataclass
class Spectrogram:
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    magnitudes: np.ndarray
    sample_rate: int
    window: int
    hop: int
    nfft: int
    # multiply a sum of squared grid magnitudes by this to get amplitude**2
    power_scale: float

    @property
    def n_frames(self) -> int:
        return self.frame_times.shape[0]

    @property
    def bin_hz(self) -> float:
        return float(self.bin_freqs[1] - self.bin_freqs[0]) if self.bin_freqs.size > 1 else np.nan

    def band_slice(self, band: FrequencyBand) -> slice:
        if band.lo < self.bin_freqs[0] or band.hi > self.bin_freqs[-1]:
            raise BandError(
                f"band [{band.lo:.1f}, {band.hi:.1f}] Hz outside grid "
                f"[{self.bin_freqs[0]:.1f}, {self.bin_freqs[-1]:.1f}] Hz")
        i0 = int(np.searchsorted(self.bin_freqs, band.lo, side="left"))
        i1 = int(np.searchsorted(self.bin_freqs, band.hi, side="right"))
        return slice(i0, i1)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return 0 if n_samples < window else (n_samples - window) // hop + 1


def _grid(sample_rate, bin_hz, fmin, fmax):
    nyq = sample_rate / 2.0
    fmin = 0.0 if fmin is None else max(0.0, fmin)
    fmax = nyq if fmax is None else min(nyq, fmax)
    k0 = math.ceil(fmin / bin_hz - 1e-9)
    k1 = math.floor(fmax / bin_hz + 1e-9)
    return np.arange(k0, k1 + 1) * bin_hz


class _GridInterpolator:
    """Quadratic interpolation from native FFT bins onto the output grid."""

    def __init__(self, grid, sample_rate, nfft):
        native_hz = sample_rate / nfft
        pos = grid / native_hz
        last = nfft // 2
        centre = np.clip(np.rint(pos).astype(np.int64), 1, last - 1)
        self.frac = pos - centre
        self.idx = centre

    def __call__(self, mags):
        ym = mags[:, self.idx - 1]
        y0 = mags[:, self.idx]
        yp = mags[:, self.idx + 1]
        fr = self.frac
        out = y0 + 0.5 * fr * (yp - ym) + 0.5 * fr * fr * (yp - 2.0 * y0 + ym)
        return np.maximum(out, 0.0)


def _frame_magnitudes(frames, win, nfft, interp):
    spec = np.fft.rfft(frames * win, n=nfft, axis=1)
    return interp(np.abs(spec) * (2.0 / win.sum()))


def spectrogram(audio: AudioBuffer, dsp: DspConfig = DspConfig(), *, fmin: float | None = None,
                fmax: float | None = None, chunk_frames: int = 128) -> Spectrogram:
    """Magnitude STFT on the 2.5 Hz grid, one frame per output period.

    Frames are timestamped at their window centers.  ``fmin``/``fmax`` limit
    the exported grid (the FFT is unchanged).
    """
    sr = audio.sample_rate
    window, hop, nfft = dsp.frame_params(sr)
    x = audio.samples
    n_frames = frame_count(x.shape[0], window, hop)
    if n_frames == 0:
        raise EmptySpectrogramError(
            f"audio has {x.shape[0]} samples; one analysis window needs {window}")
    grid = _grid(sr, dsp.bin_hz, fmin, fmax)
    win = hann(window)
    interp = _GridInterpolator(grid, sr, nfft)
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]
    mags = np.empty((n_frames, grid.size))
    for s in range(0, n_frames, chunk_frames):
        mags[s:s + chunk_frames] = _frame_magnitudes(frames[s:s + chunk_frames], win, nfft, interp)
    times = (np.arange(n_frames) * hop + window / 2.0) / sr
    native_hz = sr / nfft
    power_scale = (dsp.bin_hz / native_hz) * win.sum() ** 2 / (nfft * np.sum(win**2))
    return Spectrogram(times, grid, mags, sr, window, hop, nfft, float(power_scale))


# ---------------------------------------------------------------------------
# ridge
# ---------------------------------------------------------------------------

@dataclass
class Ridge:
    times: np.ndarray
    freqs: np.ndarray
    magnitudes: np.ndarray
    bins: np.ndarray


def _refine(mags, path, bin_freqs, bin_hz):
    """Log-parabolic peak interpolation around each ridge bin."""
    n_bins = mags.shape[1]
    rows = np.arange(path.size)
    freqs = bin_freqs[path].astype(float)
    inner = (path > 0) & (path < n_bins - 1)
    if not inner.any():
        return freqs
    r, p = rows[inner], path[inner]
    ym, y0, yp = mags[r, p - 1], mags[r, p], mags[r, p + 1]
    ok = (ym > 0) & (y0 > 0) & (yp > 0) & (y0 >= ym) & (y0 >= yp)
    lm, l0, lp = (np.log(np.where(ok, v, 1.0)) for v in (ym, y0, yp))
    denom = lm - 2.0 * l0 + lp
    off = np.where(ok & (denom < 0), 0.5 * (lm - lp) / np.where(denom < 0, denom, -1.0), 0.0)
    freqs[inner] += np.clip(off, -0.5, 0.5) * bin_hz
    return freqs


def extract_ridge(spec: Spectrogram, band: FrequencyBand,
                  jump_penalty: float = DEFAULT_JUMP_PENALTY, *, refine: bool = True) -> Ridge:
    """Highest-scoring frequency path through ``band``.

    Scores are the band magnitudes divided by their maximum over the band, and
    consecutive frames pay ``jump_penalty * (Hz jump)**2``.  A zero penalty
    gives the per-frame argmax.
    """
    sl = spec.band_slice(band)
    mags = np.ascontiguousarray(spec.magnitudes[:, sl])
    if mags.shape[1] == 0:
        raise BandError("band contains no grid bins")
    peak = mags.max() if mags.size else 0.0
    score = mags / peak if peak > 0 else np.zeros_like(mags)
    path = kernels.ridge_viterbi(score, float(spec.bin_hz), float(jump_penalty))
    bin_freqs = spec.bin_freqs[sl]
    if refine:
        freqs = _refine(mags, path, bin_freqs, spec.bin_hz)
    else:
        freqs = bin_freqs[path].astype(float)
    return Ridge(spec.frame_times.copy(), freqs, mags[np.arange(path.size), path], path)


# ---------------------------------------------------------------------------
# envelope
# ---------------------------------------------------------------------------

@dataclass
class Series:
    times: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.times.shape[0]


def default_frame_times(n_samples: int, sample_rate: int, dsp: DspConfig = DspConfig()) -> np.ndarray:
    window, hop, _ = dsp.frame_params(sample_rate)
    n = frame_count(n_samples, window, hop)
    if n == 0:
        return np.arange(0.0, n_samples / sample_rate, 1.0 / dsp.out_rate_hz)
    return (np.arange(n) * hop + window / 2.0) / sample_rate


def amplitude_envelope(audio: AudioBuffer, dsp: DspConfig = DspConfig(), *,
                       times: np.ndarray | None = None) -> Series:
    """Block-max / moving-average amplitude envelope sampled on the frame clock.

    Block and smoothing lengths are fixed in time (22.7 ms, 5 blocks), so
    rates other than 44.1 kHz get proportionally rescaled blocks.
    """
    sr = audio.sample_rate
    n = len(audio)
    if times is None:
        times = default_frame_times(n, sr, dsp)
    times = np.asarray(times, dtype=float)
    if n == 0:
        return Series(np.array([]), np.array([]))
    block = max(1, int(round(dsp.envelope_block_ms * 1e-3 * sr)))
    peaks = kernels.block_max(np.ascontiguousarray(audio.samples), block)
    k = dsp.envelope_smooth_blocks
    kernel = np.ones(k)
    smooth = np.convolve(peaks, kernel, mode="same") / np.convolve(np.ones_like(peaks), kernel, mode="same")
    starts = np.arange(peaks.size) * block
    centres = (starts + 0.5 * np.minimum(block, n - starts)) / sr
    return Series(times, np.interp(times, centres, smooth))


# ---------------------------------------------------------------------------
# per-band series
# ---------------------------------------------------------------------------

@dataclass
class BandSeries:
    times: np.ndarray
    freq: np.ndarray
    amplitude: np.ndarray
    ridge_magnitude: np.ndarray
    present: np.ndarray

    def __len__(self):
        return self.times.shape[0]


PRESENCE_RATIO = 4.0
PRESENCE_FLOOR = 1e-6


def band_amplitude(spec: Spectrogram, band: FrequencyBand) -> np.ndarray:
    """Sine-equivalent amplitude of the energy inside ``band`` per frame."""
    sl = spec.band_slice(band)
    power = np.sum(spec.magnitudes[:, sl] ** 2, axis=1) * spec.power_scale
    return np.sqrt(power)


def ridge_presence(mags: np.ndarray, ridge_mag: np.ndarray) -> np.ndarray:
    floor = np.median(mags, axis=1) if mags.shape[1] else np.zeros(mags.shape[0])
    return (ridge_mag > PRESENCE_FLOOR) & (ridge_mag >= PRESENCE_RATIO * floor)


def band_series(audio: AudioBuffer | None, band: FrequencyBand, dsp: DspConfig = DspConfig(), *,
                spec: Spectrogram | None = None) -> BandSeries:
    """Ridge frequency and in-band amplitude of one taxel on the frame clock."""
    if spec is None:
        if audio is None:
            raise ValueError("band_series needs audio or a spectrogram")
        window, _, nfft = dsp.frame_params(audio.sample_rate)
        margin = 4 * audio.sample_rate / nfft
        spec = spectrogram(audio, dsp, fmin=band.lo - margin, fmax=band.hi + margin)
    ridge = extract_ridge(spec, band, dsp.jump_penalty)
    amp = band_amplitude(spec, band)
    present = ridge_presence(spec.magnitudes[:, spec.band_slice(band)], ridge.magnitudes)
    return BandSeries(ridge.times, ridge.freqs, amp, ridge.magnitudes, present)


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------

@dataclass
class FrameResult:
    time: float
    freq: float
    amplitude: float
    ridge_magnitude: float
    present: bool


class StreamingBandTracker:
    """Incremental per-band tracking over audio delivered in chunks.

    Keeps the last ``window - hop`` samples between chunks, so each frame is
    emitted as soon as its window is complete.  The ridge uses a forward-only
    penalized recursion (no look-ahead) normalized by the running band peak.
    """

    def __init__(self, bands: dict[str, FrequencyBand], sample_rate: int = DEFAULT_SAMPLE_RATE,
                 dsp: DspConfig = DspConfig()):
        self.bands = dict(bands)
        self.sample_rate = sample_rate
        self.dsp = dsp
        self.window, self.hop, self.nfft = dsp.frame_params(sample_rate)
        native_hz = sample_rate / self.nfft
        lo = min(b.lo for b in self.bands.values()) - 4 * native_hz
        hi = max(b.hi for b in self.bands.values()) + 4 * native_hz
        self.grid = _grid(sample_rate, dsp.bin_hz, lo, hi)
        self._interp = _GridInterpolator(self.grid, sample_rate, self.nfft)
        self._win = hann(self.window)
        self.power_scale = (dsp.bin_hz / native_hz) * self._win.sum() ** 2 / (
            self.nfft * np.sum(self._win ** 2))
        self._slices = {}
        for key, band in self.bands.items():
            i0 = int(np.searchsorted(self.grid, band.lo, side="left"))
            i1 = int(np.searchsorted(self.grid, band.hi, side="right"))
            self._slices[key] = slice(i0, i1)
        self._buffer = np.zeros(0)
        self._consumed = 0  # absolute index of self._buffer[0]
        self._frame = 0
        self._acc = {k: None for k in self.bands}
        self._peak = {k: 0.0 for k in self.bands}

    @property
    def latency_samples(self) -> int:
        return self.window + self.hop

    def feed(self, chunk) -> list[tuple[str, FrameResult]]:
        chunk = np.asarray(chunk, dtype=np.float64)
        self._buffer = np.concatenate([self._buffer, chunk])
        out = []
        while True:
            start = self._frame * self.hop - self._consumed
            if start + self.window > self._buffer.shape[0]:
                break
            frame = self._buffer[start:start + self.window][None, :]
            mags = _frame_magnitudes(frame, self._win, self.nfft, self._interp)[0]
            t = (self._frame * self.hop + self.window / 2.0) / self.sample_rate
            for key in self.bands:
                out.append((key, self._track(key, mags, t)))
            self._frame += 1
        drop = self._frame * self.hop - self._consumed
        if drop > 0:
            self._buffer = self._buffer[drop:]
            self._consumed += drop
        return out

    def _track(self, key, mags, t) -> FrameResult:
        sl = self._slices[key]
        band_mags = mags[sl]
        self._peak[key] = max(self._peak[key], float(band_mags.max()))
        peak = self._peak[key]
        score = band_mags / peak if peak > 0 else np.zeros_like(band_mags)
        acc = self._acc[key]
        if acc is None or self.dsp.jump_penalty == 0:
            acc = score.copy()
        else:
            acc = kernels.ridge_online_step(acc, score, float(self.dsp.bin_hz),
                                            float(self.dsp.jump_penalty))
        acc = acc - acc.max()
        self._acc[key] = acc
        j = int(np.argmax(acc))
        freq = _refine(band_mags[None, :], np.array([j]), self.grid[sl], self.dsp.bin_hz)[0]
        amp = float(np.sqrt(np.sum(band_mags ** 2) * self.power_scale))
        rmag = float(band_mags[j])
        present = bool(ridge_presence(band_mags[None, :], np.array([rmag]))[0])
        return FrameResult(t, float(freq), amp, rmag, present)
