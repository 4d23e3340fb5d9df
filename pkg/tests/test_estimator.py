from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubetac.demo import TARE_WINDOW, demo_array, demo_traces
from tubetac.dsp import AudioBuffer, BandSeries, FrequencyBand, spectrogram
from tubetac.estimator import (ConfigurationError, ContactState, StreamingEstimator, TaringError,
                               TaxelReading, TaxelSpec, analysis_range, assign_bands,
                               estimate_force, model_force, process_spectrogram, process_stream,
                               tare_unloaded, with_bands)
from tubetac.model import FORCE_FITS, fitted_freq
from tubetac.synth import SynthConfig, add_noise, synthesize, synthesize_components

C59 = TaxelSpec.build("C", 59)


def _no_hole(key, L_mm, mass=0.0):
    return TaxelSpec.build(key, L_mm, 3, 0, mass, force_defl=FORCE_FITS[3])


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------

def test_demo_lengths_give_disjoint_bands():
    taxels = [_no_hole(k, L) for k, L in zip("ABCD", (41, 47, 59, 65))]
    assert taxels[0].delta_max == pytest.approx(2.4, abs=0.05)
    bands = assign_bands(taxels)
    for i in range(4):
        for j in range(i + 1, 4):
            assert not bands[i].overlaps(bands[j])
        lo, hi = taxels[i].freq_range
        assert bands[i].lo <= lo and hi <= bands[i].hi


def test_single_taxel_band_is_sweep_plus_guard():
    (band,) = assign_bands([C59], guard=10)
    lo, hi = C59.freq_range
    assert band.lo == pytest.approx(lo - 10) and band.hi == pytest.approx(hi + 10)
    assert lo == pytest.approx(fitted_freq(0.059, C59.length_freq))


def test_equal_lengths_rejected():
    with pytest.raises(ConfigurationError, match="A.*B"):
        assign_bands([TaxelSpec.build("A", 59), TaxelSpec.build("B", 59)])


def test_overlapping_sweeps_name_the_pair():
    with pytest.raises(ConfigurationError, match="P.*Q|Q.*P"):
        assign_bands([TaxelSpec.build("P", 59), TaxelSpec.build("Q", 58)])


def test_colliding_guards_meet_at_midpoint():
    a, b = TaxelSpec.build("A", 59), TaxelSpec.build("B", 55.5)
    gap = b.freq_range[0] - a.freq_range[1]
    assert 0 < gap < 20
    ba, bb = assign_bands([a, b], guard=10)
    mid = 0.5 * (a.freq_range[1] + b.freq_range[0])
    assert bb.lo == pytest.approx(mid) and ba.hi == pytest.approx(mid)
    assert not ba.overlaps(bb)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(30, 90), min_size=1, max_size=6, unique=True))
def test_assigned_bands_are_disjoint(lengths):
    taxels = [TaxelSpec.build(f"T{k}", L) for k, L in enumerate(lengths)]
    try:
        bands = assign_bands(taxels)
    except ConfigurationError:
        return
    for i in range(len(bands)):
        for j in range(i + 1, len(bands)):
            assert not bands[i].overlaps(bands[j])


def test_spec_rejects_band_not_covering_sweep():
    with pytest.raises(ConfigurationError):
        replace(C59, band=FrequencyBand(1330, 1400))


# ---------------------------------------------------------------------------
# taring
# ---------------------------------------------------------------------------

def _series(freq, present=True):
    freq = np.asarray(freq, dtype=float)
    n = freq.size
    return BandSeries(np.arange(n) * 0.04, freq, np.full(n, 0.3), np.full(n, 0.3),
                      np.full(n, present, dtype=bool))


def test_tare_constant_and_outlier():
    assert tare_unloaded(_series(np.full(25, 1330.0)), (0, 1)) == 1330.0
    f = np.full(25, 1330.0)
    f[7] = 1332.5
    assert tare_unloaded(_series(f), (0, 1)) == 1330.0


def test_tare_without_ridge_fails():
    with pytest.raises(TaringError):
        tare_unloaded(_series(np.full(25, 1330.0), present=False), (0, 1))
    sparse = _series(np.full(25, 1330.0))
    sparse.present[:20] = False
    with pytest.raises(TaringError):
        tare_unloaded(sparse, (0, 1))


def test_tare_shift_invariance():
    f = 1328.53 + np.concatenate([np.zeros(25), np.linspace(0, 40, 50)])
    base = tare_unloaded(_series(f), (0, 0.96))
    shifted = tare_unloaded(_series(f + 4.0), (0, 0.96))
    assert shifted - base == pytest.approx(4.0)
    for x in f[25:]:
        a = estimate_force(x, 0.3, C59, base)[0]
        b = estimate_force(x + 4.0, 0.3, C59, shifted)[0]
        assert a == pytest.approx(b, abs=1e-9)


# ---------------------------------------------------------------------------
# force estimation
# ---------------------------------------------------------------------------

def test_estimate_force_examples():
    f0 = C59.linear.f0
    F, state, warn = estimate_force(f0 + 5.1 * 4, 0.3, C59)
    assert F == pytest.approx(4.0) and state is ContactState.LOADED and warn is None
    assert estimate_force(f0 + 30, 0.05, C59)[:2] == (None, ContactState.NO_CONTACT)
    assert estimate_force(f0, 0.3, C59)[:2] == (0.0, ContactState.LOADED)
    assert estimate_force(f0 - 3, 0.3, C59)[0] == 0.0
    assert estimate_force(None, 0.3, C59)[1] is ContactState.NO_CONTACT


def test_estimate_force_saturates():
    F, state, _ = estimate_force(C59.linear.f0 + 5.1 * 12, 0.3, with_bands([C59])[0])
    assert F == C59.linear.F_max and state is ContactState.SATURATED


def test_cross_talk_warning():
    spec = with_bands([C59])[0]
    _, _, warn = estimate_force(spec.band.hi + 20, 0.3, spec)
    assert warn and "cross-talk" in warn


def test_transition_state_for_no_hole_cap():
    spec = _no_hole("X", 59)
    spec = replace(spec, linear=replace(C59.linear, amplitude_threshold=0.1))
    f0 = spec.linear.f0
    assert estimate_force(f0 + 10, 0.3, spec)[1] is ContactState.TRANSITION
    heavy = replace(_no_hole("X", 59, mass=200.0), linear=spec.linear)
    assert estimate_force(f0 + 10, 0.3, heavy)[1] is ContactState.LOADED


def test_missing_calibration():
    with pytest.raises(ConfigurationError):
        estimate_force(1330, 0.3, _no_hole("X", 59))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1300, 1420), min_size=2, max_size=20))
def test_estimate_force_monotone_in_frequency(freqs):
    freqs = sorted(freqs)
    forces = [estimate_force(f, 0.3, C59)[0] for f in freqs]
    assert all(b >= a for a, b in zip(forces, forces[1:]))
    assert all(0 <= F <= C59.linear.F_max for F in forces)


def test_reading_invariant():
    with pytest.raises(ValueError):
        TaxelReading(0.0, 1330, 0.3, None, ContactState.LOADED)
    with pytest.raises(ValueError):
        TaxelReading(0.0, 1330, 0.1, 1.0, ContactState.NO_CONTACT)


def test_model_force_inverts_forward_model():
    for F in (1.0, 4.0, 8.0):
        f, _ = C59.response(F)
        assert model_force(f, C59) == pytest.approx(F, abs=1e-6)


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------

def test_silence_is_no_contact():
    res = process_stream(AudioBuffer(np.zeros(3 * 44100)), demo_array())
    assert set(res.tracks) == {"A", "B", "C", "D"}
    for tr in res.tracks.values():
        assert all(c is ContactState.NO_CONTACT for c in tr.contact)
        assert np.all(np.isnan(tr.force))


def _short_scene(seconds=12.0):
    array = demo_array()
    traces = [replace(tr, time=tr.time[tr.time <= seconds], force=tr.force[tr.time <= seconds])
              for tr in demo_traces()]
    traces = [replace(tr, time=np.append(tr.time, seconds), force=np.append(tr.force, tr(seconds)))
              for tr in traces]
    return array, traces


def test_per_taxel_isolation_is_exact_per_band():
    array, traces = _short_scene()
    audio = synthesize(traces, array, SynthConfig(noise_snr_db=30.0))
    array = with_bands(array)
    spec = spectrogram(audio, fmin=analysis_range(array, 44100)[0], fmax=analysis_range(array, 44100)[1])
    r1 = process_spectrogram(spec, array)
    sl = spec.band_slice(array[1].band)
    rng = np.random.default_rng(3)
    bad = replace(spec, magnitudes=spec.magnitudes.copy())
    bad.magnitudes[:, sl] = rng.random(bad.magnitudes[:, sl].shape)
    r2 = process_spectrogram(bad, array)
    for key in "ACD":
        t1, t2 = r1.tracks[key], r2.tracks[key]
        assert np.array_equal(t1.freq, t2.freq) and np.array_equal(t1.amplitude, t2.amplitude)
        assert np.array_equal(t1.force, t2.force, equal_nan=True) and t1.contact == t2.contact
    assert not np.array_equal(r1.tracks["B"].freq, r2.tracks["B"].freq)


def test_per_taxel_isolation_through_audio():
    # window sidelobes couple bands far below the reading resolution
    array, traces = _short_scene()
    comps = synthesize_components(traces, array, SynthConfig())
    clean = sum(comps[k] for k in sorted(comps))
    corrupted = clean - comps["B"] + 0.2 * np.sin(2 * np.pi * 1650 * np.arange(clean.size) / 44100)
    r1 = process_stream(AudioBuffer(clean), array)
    r2 = process_stream(AudioBuffer(corrupted), array)
    for key in "ACD":
        t1, t2 = r1.tracks[key], r2.tracks[key]
        assert t1.contact == t2.contact
        assert np.allclose(t1.force, t2.force, atol=1e-3, equal_nan=True)
        assert np.allclose(t1.freq, t2.freq, atol=0.01)
    assert r1.tracks["B"].contact != r2.tracks["B"].contact


def test_dead_band_does_not_abort_others():
    array, traces = _short_scene()
    comps = synthesize_components(traces, array, SynthConfig())
    dead = sum(comps[k] for k in sorted(comps) if k != "B")
    res = process_stream(add_noise(AudioBuffer(dead), 30.0), array, tare_window=TARE_WINDOW)
    assert "B" in res.errors and set(res.tracks) == {"A", "C", "D"}


def test_streaming_estimator_matches_batch():
    array, traces = _short_scene(8.0)
    audio = synthesize(traces, array, SynthConfig(noise_snr_db=30.0))
    batch = process_stream(audio, array, tare_window=TARE_WINDOW)
    est = StreamingEstimator(array, tare_window=TARE_WINDOW)
    got = {k: [] for k in "ABCD"}
    for k in range(0, len(audio), 4410):
        for key, r in est.feed(audio.samples[k:k + 4410]):
            got[key].append(r)
    for key, r in est.flush():
        got[key].append(r)
    for key in "ABCD":
        tr = batch.tracks[key]
        assert len(got[key]) == len(tr)
        agree = np.mean([g.contact == c for g, c in zip(got[key], tr.contact)])
        assert agree > 0.97
        both = [(g.force, f) for g, f in zip(got[key], tr.force) if g.force is not None and np.isfinite(f)]
        # the causal ridge lags the smoothed one only around load steps
        assert np.sqrt(np.mean([(a - b) ** 2 for a, b in both])) < 0.2
    assert est.latency_samples == 8192 + 1764
