import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubetac.dsp import (AudioBuffer, BandError, DspConfig, EmptySpectrogramError, FrequencyBand,
                         StreamingBandTracker, amplitude_envelope, band_series, extract_ridge,
                         frame_count, hann, spectrogram)
from tubetac.synth import add_noise

from helpers import tone

SR = 44100


def test_frame_parameters():
    window, hop, nfft = DspConfig().frame_params(SR)
    assert (window, hop, nfft) == (8192, 1764, 16384)
    assert frame_count(100, window, hop) == 0
    assert frame_count(window, window, hop) == 1


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0 and w[4] == pytest.approx(1.0)


def test_spectrogram_grid_and_scaling(backend):
    spec = spectrogram(AudioBuffer(tone(1330.0, 0.3)), fmin=1200, fmax=1500)
    assert np.allclose(np.diff(spec.bin_freqs), 2.5)
    assert spec.frame_times[0] == pytest.approx(4096 / SR)
    assert np.allclose(np.diff(spec.frame_times), 1764 / SR)
    peak = spec.magnitudes.max(axis=1)
    assert np.all(np.abs(peak - 0.3) < 0.01)


def test_spectrogram_too_short():
    with pytest.raises(EmptySpectrogramError):
        spectrogram(AudioBuffer(np.zeros(100)))


def test_band_outside_grid():
    spec = spectrogram(AudioBuffer(tone(1330.0)), fmin=1200, fmax=1500)
    with pytest.raises(BandError):
        spec.band_slice(FrequencyBand(1000, 1300))


@pytest.mark.parametrize("f", [900.0, 1111.1, 1328.53, 1797.6, 2199.0])
def test_ridge_stationary_tone(f, backend):
    audio = add_noise(AudioBuffer(tone(f, 0.3)), 20.0, seed=1)
    s = band_series(audio, FrequencyBand(f - 40, f + 40))
    assert np.all(np.abs(s.freq - f) <= 2.5)
    assert np.all(s.present)


def test_ridge_tracks_chirp(backend):
    t = np.arange(3 * SR) / SR
    f_inst = 1300 + 100 * t / 3
    x = 0.3 * np.sin(2 * np.pi * np.cumsum(f_inst) / SR)
    s = band_series(AudioBuffer(x), FrequencyBand(1280, 1420))
    assert np.all(np.abs(s.freq - np.interp(s.times, t, f_inst)) <= 5.0)


def test_ridge_penalty_rejects_isolated_jumps():
    spec = spectrogram(AudioBuffer(tone(1330.0) + tone(1370.0, 0.29)), fmin=1300, fmax=1400)
    r = extract_ridge(spec, FrequencyBand(1310, 1390), jump_penalty=0.01)
    assert np.all(np.abs(r.freqs - r.freqs[0]) < 1.0)


def test_band_amplitude_is_sine_equivalent():
    s = band_series(AudioBuffer(tone(1330.0, 0.2)), FrequencyBand(1300, 1360))
    assert np.allclose(s.amplitude, 0.2, rtol=0.01)


def test_silence_is_not_present():
    s = band_series(AudioBuffer(np.zeros(2 * SR)), FrequencyBand(1300, 1360))
    assert not s.present.any()


def test_envelope_fidelity_and_scale_equivariance(backend):
    x = tone(1330.0, 0.5)
    env = amplitude_envelope(AudioBuffer(x))
    settled = env.times >= 0.113
    assert np.all(np.abs(env.values[settled] - 0.5) / 0.5 < 0.02)
    for k in (0.5, 0.25, 2.0):
        scaled = amplitude_envelope(AudioBuffer(x * k))
        assert np.array_equal(scaled.values, env.values * k)
    # other gains agree up to floating-point rounding of the smoothing sums
    scaled = amplitude_envelope(AudioBuffer(x * 1.5))
    assert np.allclose(scaled.values, env.values * 1.5, rtol=1e-14, atol=0)


@settings(max_examples=25, deadline=None)
@given(amp=st.floats(0.01, 0.6), f=st.floats(950, 2100))
def test_envelope_property(amp, f):
    env = amplitude_envelope(AudioBuffer(tone(f, amp, seconds=1.0)))
    assert np.all(np.abs(env.values[env.times >= 0.113] - amp) <= 0.02 * amp)


def test_audio_buffer_validation():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((2, 10)))
    with pytest.raises(ValueError):
        AudioBuffer(np.array([1.5]))
    with pytest.raises(ValueError):
        FrequencyBand(10, 5)


def test_streaming_matches_batch_frames_and_latency(backend):
    x = tone(1330.0, 0.3, seconds=3.0) + tone(1600.0, 0.2, seconds=3.0)
    bands = {"a": FrequencyBand(1300, 1360), "b": FrequencyBand(1570, 1630)}
    tracker = StreamingBandTracker(bands, SR)
    out = []
    for k in range(0, x.size, 3000):
        before = len(out)
        out += tracker.feed(x[k:k + 3000])
        for _, fr in out[before:]:
            # the frame's window ends no later than the audio delivered so far
            assert fr.time * SR + 4096 <= k + 3000
    batch = band_series(AudioBuffer(x), bands["a"])
    a = [fr for key, fr in out if key == "a"]
    assert len(a) == len(batch)
    assert np.allclose([fr.time for fr in a], batch.times)
    assert np.allclose([fr.freq for fr in a], batch.freq, atol=0.5)
    assert np.allclose([fr.amplitude for fr in a], batch.amplitude, rtol=1e-9)
    assert tracker.latency_samples == 8192 + 1764
