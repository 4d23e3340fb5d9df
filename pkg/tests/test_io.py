import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tubetac.dsp import AudioBuffer
from tubetac.estimator import process_stream
from tubetac.demo import demo_array
from tubetac.io import (READINGS_COLUMNS, FormatError, iter_wav_chunks, read_readings, read_traces,
                        read_wav, read_wav_pcm, to_pcm16, wav_bytes, write_readings, write_traces,
                        write_wav)
from tubetac.synth import ForceTrace


@settings(max_examples=30, deadline=None)
@given(arrays(np.int16, st.integers(0, 3000)), st.sampled_from([8000, 22050, 44100, 48000]))
def test_wav_pcm_round_trip_is_bit_exact(tmp_path_factory, pcm, rate):
    path = tmp_path_factory.mktemp("wav") / "x.wav"
    path.write_bytes(wav_bytes(pcm, rate))
    got, got_rate = read_wav_pcm(path)
    assert got_rate == rate and np.array_equal(got, pcm)
    # float view survives re-quantization unchanged
    assert np.array_equal(to_pcm16(read_wav(path).samples), pcm)


def test_write_wav_round_trip_and_permissions(tmp_path):
    x = 0.5 * np.sin(np.arange(1000) * 0.1)
    path = tmp_path / "a.wav"
    write_wav(path, AudioBuffer(x))
    back = read_wav(path)
    assert back.sample_rate == 44100
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32768
    umask = os.umask(0)
    os.umask(umask)
    assert os.stat(path).st_mode & 0o777 == 0o666 & ~umask
    assert not [p for p in tmp_path.iterdir() if p.name != "a.wav"]


def test_full_scale_clips_without_wrap():
    assert list(to_pcm16([1.0, -1.0, 0.0])) == [32767, -32768, 0]


@pytest.mark.parametrize("cut, offset", [(5, 5), (20, 20), (30, 30)])
def test_truncated_header_reports_offset(tmp_path, cut, offset):
    path = tmp_path / "t.wav"
    path.write_bytes(wav_bytes(np.zeros(10, np.int16))[:cut])
    with pytest.raises(FormatError) as exc:
        read_wav(path)
    assert exc.value.offset == offset
    assert f"byte offset {offset}" in str(exc.value)


def test_truncated_data_and_bad_format(tmp_path):
    good = wav_bytes(np.arange(100, dtype=np.int16))
    path = tmp_path / "t.wav"
    path.write_bytes(good[:-20])
    with pytest.raises(FormatError, match="only 90"):
        read_wav(path)
    stereo = bytearray(good)
    stereo[22:24] = struct.pack("<H", 2)
    path.write_bytes(bytes(stereo))
    with pytest.raises(FormatError, match="mono"):
        read_wav(path)
    path.write_bytes(b"RIFX" + good[4:])
    with pytest.raises(FormatError, match="RIFF"):
        read_wav(path)


def test_unknown_chunks_are_skipped(tmp_path):
    pcm = np.arange(-50, 50, dtype=np.int16)
    raw = wav_bytes(pcm)
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    path = tmp_path / "l.wav"
    path.write_bytes(raw[:36] + extra + raw[36:])
    assert np.array_equal(read_wav_pcm(path)[0], pcm)


def test_chunked_read_matches_whole_file(tmp_path):
    pcm = (np.arange(10001) % 2000 - 1000).astype(np.int16)
    path = tmp_path / "c.wav"
    path.write_bytes(wav_bytes(pcm))
    chunks = [c for _, c in iter_wav_chunks(path, 4410)]
    assert [c.size for c in chunks] == [4410, 4410, 1181]
    assert np.array_equal(np.concatenate(chunks), read_wav(path).samples)


def test_readings_csv_header_and_precision(tmp_path):
    t = np.arange(3 * 44100) / 44100
    res = process_stream(AudioBuffer(0.3 * np.sin(2 * np.pi * 1328.53 * t)), demo_array())
    path = tmp_path / "r.csv"
    write_readings(path, res)
    first = path.read_text().splitlines()[0]
    assert tuple(first.split(",")) == READINGS_COLUMNS
    rows = read_readings(path)
    assert [r["taxel_id"] for r in rows[:4]] == ["A", "B", "C", "D"]
    for r in rows:
        if r["freq_hz"]:
            mantissa = r["freq_hz"].split("e")[0].replace(".", "").replace("-", "").lstrip("0")
            assert len(mantissa) <= 6
        assert (r["force_n"] == "") == (r["contact"] in ("NoContact", "Transition"))


def test_traces_round_trip(tmp_path):
    traces = [ForceTrace("B", np.array([0.0, 1.0, 2.5]), np.array([0.0, 2.0, 0.0])),
              ForceTrace("A", np.array([0.0, 2.5]), np.array([1.0, 1.0]))]
    path = tmp_path / "tr.csv"
    write_traces(path, traces)
    back = {tr.taxel_id: tr for tr in read_traces(path)}
    assert set(back) == {"A", "B"}
    for tr in traces:
        assert np.allclose(back[tr.taxel_id](tr.time), tr.force)


def test_trace_file_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("")
    with pytest.raises(FormatError, match="empty"):
        read_traces(path)
    path.write_text("t,A\n0,1\n1,1\n")
    with pytest.raises(FormatError, match="time_s"):
        read_traces(path)
    path.write_text("time_s,A\n0,x\n1,1\n")
    with pytest.raises(FormatError, match="line 2"):
        read_traces(path)
    path.write_text("time_s,A\n0,1\n1,-1\n")
    with pytest.raises(ValueError):
        read_traces(path)
