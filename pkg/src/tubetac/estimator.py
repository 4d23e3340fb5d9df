"""Multi-taxel demultiplexing and frequency-to-force conversion."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .calibration import LinearCalibration, scale_sensitivity
from .dsp import (AudioBuffer, BandSeries, DspConfig, FrequencyBand, Spectrogram,
                  StreamingBandTracker, band_series, spectrogram)
from .model import (LENGTH_FITS, REFERENCE_LENGTH, AcousticConstants, CapDesign,
                    ForceDeflectionFit, LengthFreqFit, TransitionModel, TubeGeometry,
                    cap_force_fit, deflection_from_force, fitted_freq, forward_response,
                    seal_force, table_sensitivity, table_threshold)

log = logging.getLogger(__name__)

DEFAULT_GUARD_HZ = 10.0
TARE_MIN_PRESENT = 0.5


class ConfigurationError(ValueError):
    pass


class TaringError(RuntimeError):
    pass


class ContactState(str, enum.Enum):
    NO_CONTACT = "NoContact"
    TRANSITION = "Transition"
    LOADED = "Loaded"
    SATURATED = "Saturated"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class TaxelSpec:
    id: str
    tube: TubeGeometry
    cap: CapDesign
    length_freq: LengthFreqFit
    force_defl: ForceDeflectionFit
    linear: LinearCalibration | None = None
    band: FrequencyBand | None = None
    transition: TransitionModel | None = None
    constants: AcousticConstants = AcousticConstants()

    def __post_init__(self):
        if self.transition is None:
            object.__setattr__(self, "transition", TransitionModel.for_cap(self.cap))
        if self.band is not None:
            lo, hi = self.freq_range
            if not (self.band.lo <= lo and hi <= self.band.hi):
                raise ConfigurationError(
                    f"taxel {self.id}: band [{self.band.lo:.1f}, {self.band.hi:.1f}] Hz does not "
                    f"contain its frequency range [{lo:.1f}, {hi:.1f}] Hz")

    @property
    def delta_max(self) -> float:
        """Largest cap deflection [mm]."""
        return self.force_defl.delta_max

    @property
    def freq_range(self) -> tuple[float, float]:
        L = self.tube.length_L
        return (fitted_freq(L, self.length_freq),
                fitted_freq(L - self.delta_max * 1e-3, self.length_freq))

    @property
    def transition_ambiguous(self) -> bool:
        """True for caps whose light-contact frequency does not determine force."""
        return (not self.cap.has_hole
                and self.transition.effective_deviation(self.cap.added_mass_m) > 0)

    def response(self, F):
        return forward_response(self, F)

    @classmethod
    def build(cls, id: str, L_mm: float, t_mm: float = 3.0, h_mm: float = 3.0, m_mg: float = 0.0, *,
              length_fit: LengthFreqFit | None = None, F_min: float | None = None,
              threshold: float | None = None, **kw) -> TaxelSpec:
        """Taxel with tabulated defaults for its cap and a linear calibration."""
        fit = length_fit or LENGTH_FITS["5N"]
        cap = CapDesign(t_mm, h_mm, m_mg)
        tube = TubeGeometry(L_mm * 1e-3)
        compliance = kw.pop("force_defl", None) or cap_force_fit(cap, fit)
        linear = kw.pop("linear", None)
        if linear is None and cap.has_hole:
            linear = LinearCalibration(
                f0=fitted_freq(tube.length_L, fit),
                sensitivity_S=scale_sensitivity(table_sensitivity(cap), REFERENCE_LENGTH, tube.length_L),
                F_min=seal_force(cap) if F_min is None else F_min,
                F_max=compliance.F_max,
                amplitude_threshold=table_threshold(cap) if threshold is None else threshold,
            )
        return cls(id, tube, cap, fit, compliance, linear, **kw)


@dataclass(frozen=True)
class TaxelReading:
    time: float
    freq: float
    amplitude: float
    force: float | None
    contact: ContactState
    warning: str | None = None

    def __post_init__(self):
        has_force = self.contact in (ContactState.LOADED, ContactState.SATURATED)
        if has_force != (self.force is not None):
            raise ValueError("force must be present exactly for Loaded/Saturated readings")


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------

def assign_bands(taxels, guard: float = DEFAULT_GUARD_HZ) -> list[FrequencyBand]:
    """Disjoint analysis bands, one per taxel, in input order.

    Each band covers the taxel's unloaded-to-fully-deflected frequency sweep
    widened by ``guard``; where two guard margins collide the boundary is
    placed midway between the sweeps.
    """
    taxels = list(taxels)
    lengths = [tx.tube.length_L for tx in taxels]
    for i in range(len(taxels)):
        for j in range(i + 1, len(taxels)):
            if lengths[i] == lengths[j]:
                raise ConfigurationError(
                    f"taxels {taxels[i].id} and {taxels[j].id} have the same tube length")
    cores = [tx.freq_range for tx in taxels]
    order = sorted(range(len(taxels)), key=lambda k: cores[k][0])
    lo = {k: cores[k][0] - guard for k in order}
    hi = {k: cores[k][1] + guard for k in order}
    for a, b in zip(order, order[1:]):
        if cores[a][1] >= cores[b][0]:
            raise ConfigurationError(
                f"frequency sweeps of taxels {taxels[a].id} "
                f"[{cores[a][0]:.1f}, {cores[a][1]:.1f}] Hz and {taxels[b].id} "
                f"[{cores[b][0]:.1f}, {cores[b][1]:.1f}] Hz overlap")
        if hi[a] >= lo[b]:
            mid = 0.5 * (cores[a][1] + cores[b][0])
            hi[a] = np.nextafter(mid, -np.inf)
            lo[b] = mid
    return [FrequencyBand(float(lo[k]), float(hi[k])) for k in range(len(taxels))]


def with_bands(taxels, guard: float = DEFAULT_GUARD_HZ) -> list[TaxelSpec]:
    """Copy of ``taxels`` with automatically assigned bands where missing."""
    from dataclasses import replace
    taxels = list(taxels)
    auto = assign_bands(taxels, guard)
    out = [tx if tx.band is not None else replace(tx, band=b) for tx, b in zip(taxels, auto)]
    check_disjoint(out)
    return out


def check_disjoint(taxels) -> None:
    taxels = list(taxels)
    for i in range(len(taxels)):
        for j in range(i + 1, len(taxels)):
            a, b = taxels[i].band, taxels[j].band
            if a is not None and b is not None and a.overlaps(b):
                raise ConfigurationError(f"bands of taxels {taxels[i].id} and {taxels[j].id} overlap")


# ---------------------------------------------------------------------------
# taring and force
# ---------------------------------------------------------------------------

def tare_unloaded(series: BandSeries, window: tuple[float, float]) -> float:
    """Median ridge frequency over ``window`` (seconds), ignoring frames without a ridge.

    At least half of the frames in the window must carry a ridge; otherwise
    the band is treated as silent.
    """
    t0, t1 = window
    in_window = (series.times >= t0) & (series.times <= t1)
    sel = in_window & np.asarray(series.present, dtype=bool)
    if sel.sum() < max(1, TARE_MIN_PRESENT * in_window.sum()):
        raise TaringError(f"no ridge above the noise floor in [{t0}, {t1}] s "
                          f"({int(sel.sum())} of {int(in_window.sum())} frames)")
    return float(np.median(np.asarray(series.freq)[sel]))


def _ambiguous_range(spec: TaxelSpec, f0: float) -> tuple[float, float]:
    ft = min(spec.transition.transition_force_Ft, spec.force_defl.F_max)
    F = np.linspace(0.0, ft, 301)
    freq, _ = forward_response(spec, F)
    offset = f0 - freq[0]
    return float(freq.min() + offset), float(freq.max() + offset)


def estimate_force(freq: float | None, amplitude: float, spec: TaxelSpec,
                   f0: float | None = None) -> tuple[float | None, ContactState, str | None]:
    """``(force, contact, warning)`` for one frame of one taxel."""
    cal = spec.linear
    if cal is None:
        raise ConfigurationError(f"taxel {spec.id} has no linear calibration")
    f0 = cal.f0 if f0 is None else f0
    warning = None
    if freq is None or not np.isfinite(freq) or amplitude < cal.amplitude_threshold:
        return None, ContactState.NO_CONTACT, None
    if spec.band is not None and not spec.band.contains(freq):
        warning = (f"cross-talk: {freq:.1f} Hz outside band "
                   f"[{spec.band.lo:.1f}, {spec.band.hi:.1f}] Hz")
    if spec.transition_ambiguous:
        lo, hi = _ambiguous_range(spec, f0)
        if lo <= freq <= hi:
            return None, ContactState.TRANSITION, warning
    force = (freq - f0) / cal.sensitivity_S
    if force >= cal.F_max:
        return float(cal.F_max), ContactState.SATURATED, warning
    return float(max(force, 0.0)), ContactState.LOADED, warning


def model_force(freq: float, spec: TaxelSpec) -> float:
    """Diagnostic inversion through the full length and compliance models."""
    fit = spec.length_freq
    L_eff = fit.slope / (freq - fit.b3)
    delta = max(0.0, (spec.tube.length_L - L_eff) * 1e3)
    delta = min(delta, spec.delta_max)
    return float(spec.force_defl.beta1 * delta ** spec.force_defl.beta2 + spec.force_defl.beta3)


# ---------------------------------------------------------------------------
# stream processing
# ---------------------------------------------------------------------------

@dataclass
class TaxelTrack:
    """Columnar 25 Hz readings of one taxel."""

    id: str
    times: np.ndarray
    freq: np.ndarray
    amplitude: np.ndarray
    force: np.ndarray  # NaN where absent
    contact: list
    warnings: list = field(default_factory=list)
    f0: float = np.nan

    def __len__(self):
        return self.times.shape[0]

    def readings(self) -> list[TaxelReading]:
        out = []
        for k in range(len(self)):
            f = None if np.isnan(self.force[k]) else float(self.force[k])
            out.append(TaxelReading(float(self.times[k]), float(self.freq[k]),
                                    float(self.amplitude[k]), f, self.contact[k], self.warnings[k]))
        return out


@dataclass
class StreamResult:
    tracks: dict[str, TaxelTrack]
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        for tr in self.tracks.values():
            return tr.times
        return np.array([])


def _convert(series: BandSeries, spec: TaxelSpec, f0: float) -> TaxelTrack:
    n = len(series)
    force = np.full(n, np.nan)
    contact = []
    warnings = []
    for k in range(n):
        freq = float(series.freq[k]) if series.present[k] else None
        F, state, warn = estimate_force(freq, float(series.amplitude[k]), spec, f0)
        if F is not None:
            force[k] = F
        contact.append(state)
        warnings.append(warn)
    return TaxelTrack(spec.id, series.times, np.asarray(series.freq, dtype=float),
                      np.asarray(series.amplitude, dtype=float), force, contact, warnings, f0)


def analysis_range(array, sample_rate: int, dsp: DspConfig = DspConfig()) -> tuple[float, float]:
    """Frequency span of the shared spectrogram: all bands plus interpolation margin."""
    _, _, nfft = dsp.frame_params(sample_rate)
    margin = 4 * sample_rate / nfft
    return (min(t.band.lo for t in array) - margin, max(t.band.hi for t in array) + margin)


def _prepare(array, guard):
    array = with_bands(array, guard)
    for tx in array:
        if tx.linear is None:
            raise ConfigurationError(f"taxel {tx.id} has no linear calibration")
    return array


def process_spectrogram(spec: Spectrogram, array, dsp: DspConfig = DspConfig(), *,
                        tare_window: tuple[float, float] | None = None,
                        guard: float = DEFAULT_GUARD_HZ) -> StreamResult:
    """Readings for every taxel from a precomputed spectrogram.

    Each taxel reads only the bins of its own band, and a failure in one
    taxel (e.g. nothing to tare on) is recorded in ``errors`` without
    stopping the others.
    """
    array = _prepare(array, guard)
    result = StreamResult({})
    for tx in array:
        try:
            series = band_series(None, tx.band, dsp, spec=spec)
            f0 = tx.linear.f0 if tare_window is None else tare_unloaded(series, tare_window)
            result.tracks[tx.id] = _convert(series, tx, f0)
        except (TaringError, ValueError) as exc:
            log.warning("taxel %s failed: %s", tx.id, exc)
            result.errors[tx.id] = str(exc)
    return result


def process_stream(audio: AudioBuffer, array, dsp: DspConfig = DspConfig(), *,
                   tare_window: tuple[float, float] | None = None,
                   guard: float = DEFAULT_GUARD_HZ) -> StreamResult:
    """Readings for every taxel of ``array`` on the shared STFT frame clock."""
    array = _prepare(array, guard)
    fmin, fmax = analysis_range(array, audio.sample_rate, dsp)
    spec = spectrogram(audio, dsp, fmin=fmin, fmax=fmax)
    return process_spectrogram(spec, array, dsp, tare_window=tare_window, guard=guard)


class StreamingEstimator:
    """Chunk-by-chunk counterpart of :func:`process_stream`.

    With ``tare_window`` set, readings are held back until the window has
    elapsed and then released using the tared reference.
    """

    def __init__(self, array, sample_rate: int = 44100, dsp: DspConfig = DspConfig(), *,
                 tare_window: tuple[float, float] | None = None, guard: float = DEFAULT_GUARD_HZ):
        self.array = {tx.id: tx for tx in _prepare(array, guard)}
        self.tracker = StreamingBandTracker({k: tx.band for k, tx in self.array.items()},
                                            sample_rate, dsp)
        self.tare_window = tare_window
        self.f0 = {k: (None if tare_window else tx.linear.f0) for k, tx in self.array.items()}
        self._pending = {k: [] for k in self.array}

    @property
    def latency_samples(self) -> int:
        return self.tracker.latency_samples

    def feed(self, chunk) -> list[tuple[str, TaxelReading]]:
        return self._emit(self.tracker.feed(chunk))

    def flush(self) -> list[tuple[str, TaxelReading]]:
        out = []
        for key, pending in self._pending.items():
            if self.f0[key] is None:
                self._resolve_tare(key, force=True)
            out.extend(self._drain(key))
        return out

    def _emit(self, frames):
        out = []
        for key, fr in frames:
            self._pending[key].append(fr)
            if self.f0[key] is None:
                if fr.time > self.tare_window[1]:
                    self._resolve_tare(key)
                else:
                    continue
            out.extend(self._drain(key))
        return out

    def _resolve_tare(self, key, force=False):
        frames = self._pending[key]
        t0, t1 = self.tare_window
        window = [fr for fr in frames if t0 <= fr.time <= t1]
        picked = [fr.freq for fr in window if fr.present]
        if picked and len(picked) >= TARE_MIN_PRESENT * len(window):
            self.f0[key] = float(np.median(picked))
        else:
            log.warning("taxel %s: nothing to tare on, using calibration f0", key)
            self.f0[key] = self.array[key].linear.f0

    def _drain(self, key):
        out = []
        spec = self.array[key]
        for fr in self._pending[key]:
            F, state, warn = estimate_force(fr.freq if fr.present else None, fr.amplitude,
                                            spec, self.f0[key])
            out.append((key, TaxelReading(fr.time, fr.freq, fr.amplitude, F, state, warn)))
        self._pending[key] = []
        return out
