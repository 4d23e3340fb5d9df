"""Reference scenarios: a four-taxel array and the force traces that drive it."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .calibration import (PalpationRecord, extract_linear_calibration,
                          select_amplitude_threshold)
from .dsp import AudioBuffer, DspConfig, FrequencyBand, band_series
from .estimator import TaxelSpec, with_bands
from .model import deflection_from_force
from .synth import ForceTrace, SynthConfig, synthesize

DEMO_LENGTHS_MM = {"A": 41.0, "B": 47.0, "C": 59.0, "D": 65.0}
DEMO_DURATION = 60.0
RAMP_S = 0.4

# unloaded spans shared by every taxel in the demo traces
UNLOADED_SPANS = ((0.0, 4.0), (30.0, 34.0), (56.0, 60.0))
TARE_WINDOW = (0.5, 3.5)
ROLLING_FIRST = ("A", "B")
ROLLING_SECOND = ("C", "D")


def demo_array(t_mm: float = 3.0, h_mm: float = 3.0, m_mg: float = 0.0) -> list[TaxelSpec]:
    """Four taxels of one cap design with tabulated calibrations and automatic bands."""
    return with_bands([TaxelSpec.build(k, L, t_mm, h_mm, m_mg) for k, L in DEMO_LENGTHS_MM.items()])


def _steps(levels, starts, ramp=RAMP_S):
    """Piecewise-linear knots holding ``levels[i]`` from ``starts[i]`` with linear ramps."""
    t, f = [], []
    prev = None
    for lvl, s in zip(levels, starts):
        if prev is None:
            t.append(s)
            f.append(lvl)
        else:
            t += [s - ramp / 2, s + ramp / 2]
            f += [prev, lvl]
        prev = lvl
    return t, f


def demo_traces(duration: float = DEMO_DURATION) -> list[ForceTrace]:
    """Staircase segment (4-30 s) followed by a rolling contact (34-56 s).

    Each taxel climbs its own staircase; in the rolling segment A and B are
    loaded 4 s before C and D and released 4 s after them.
    """
    stairs = {
        "A": (2.0, 4.0, 6.0, 8.0, 5.0, 3.0),
        "B": (3.0, 5.5, 7.5, 4.5, 2.5, 6.5),
        "C": (1.5, 3.5, 6.0, 8.5, 6.5, 2.0),
        "D": (2.5, 6.0, 4.0, 7.0, 9.0, 4.5),
    }
    stair_starts = np.linspace(4.0, 26.0, 7)  # six 3.7 s holds, then release at 30 s
    out = []
    for key in DEMO_LENGTHS_MM:
        levels = [0.0, *stairs[key], 0.0]
        starts = [0.0, *stair_starts[:6], 30.0]
        t, f = _steps(levels, starts)
        if key in ROLLING_FIRST:
            on, off, peak = 38.0, 52.0, 5.0
        else:
            on, off, peak = 42.0, 48.0, 5.0
        ramp = 1.5
        t += [on, on + ramp, off - ramp, off, duration]
        f += [0.0, peak, peak, 0.0, 0.0]
        out.append(ForceTrace(key, np.array(t), np.array(f)))
    return out


def palpation_trace(taxel: TaxelSpec, rate: float = 1.0, cycles: int = 2,
                    overshoot: float = 1.1, rest: float = 1.0) -> ForceTrace:
    """Triangular load/unload cycles at ``rate`` N/s up to ``overshoot * F_max``."""
    peak = overshoot * taxel.force_defl.F_max
    ramp = peak / rate
    t, f = [0.0], [0.0]
    for _ in range(cycles):
        t += [t[-1] + rest, t[-1] + rest + ramp, t[-1] + rest + 2 * ramp]
        f += [0.0, peak, 0.0]
    t.append(t[-1] + rest)
    f.append(0.0)
    return ForceTrace(taxel.id, np.array(t), np.array(f))


def synthetic_palpation(taxel: TaxelSpec, cfg: SynthConfig = SynthConfig(),
                        dsp: DspConfig = DspConfig(), trace: ForceTrace | None = None,
                        band: FrequencyBand | None = None) -> PalpationRecord:
    """Palpation record measured from synthesized audio of a single taxel."""
    trace = trace or palpation_trace(taxel)
    audio = synthesize([trace], [taxel], cfg)
    band = band or taxel.band or with_bands([taxel])[0].band
    series = band_series(audio, band, dsp)
    force = trace(trace.span[0] + series.times)
    Fc = np.minimum(force, taxel.force_defl.F_max)
    delta = np.asarray(deflection_from_force(np.maximum(Fc, taxel.force_defl.beta3), taxel.force_defl))
    return PalpationRecord(series.times, force, delta, series.freq, series.amplitude)


def calibrate_array(array, cfg: SynthConfig = SynthConfig(), dsp: DspConfig = DspConfig()) -> list[TaxelSpec]:
    """Replace each taxel's linear calibration by one measured on synthetic palpation."""
    out = []
    for tx in array:
        rec = synthetic_palpation(tx, cfg, dsp)
        thr = select_amplitude_threshold(rec).threshold
        out.append(replace(tx, linear=extract_linear_calibration(rec, thr)))
    return out


def demo_audio(array=None, cfg: SynthConfig = SynthConfig(noise_snr_db=30.0)) -> AudioBuffer:
    array = demo_array() if array is None else array
    return synthesize(demo_traces(), array, cfg)
