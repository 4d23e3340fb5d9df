"""File formats: 16-bit PCM WAV, CSV tables and atomic writes."""
from __future__ import annotations

import csv
import io as _io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer
from .synth import ForceTrace

PCM_SCALE = 32768.0
FLOAT_FMT = "{:.6g}"

_UMASK = os.umask(0)
os.umask(_UMASK)

READINGS_COLUMNS = ("time_s", "taxel_id", "freq_hz", "amplitude", "force_n", "contact")


class FormatError(ValueError):
    """Malformed input file; ``offset`` is the byte position of the problem when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype("<i2")


def wav_bytes(pcm: np.ndarray, sample_rate: int = 44100) -> bytes:
    pcm = np.asarray(pcm, dtype="<i2")
    data = pcm.tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI",
                         b"RIFF", 36 + len(data), b"WAVE",
                         b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
                         b"data", len(data))
    return header + data


def write_wav(path, audio: AudioBuffer) -> None:
    atomic_write_bytes(path, wav_bytes(to_pcm16(audio.samples), audio.sample_rate))


def _parse_header(fh) -> tuple[int, int, int]:
    """Return ``(sample_rate, data_offset, n_samples)`` after validating the RIFF layout."""
    head = fh.read(12)
    if len(head) < 12:
        raise FormatError("truncated RIFF header", len(head))
    riff, _, wave = struct.unpack("<4sI4s", head)
    if riff != b"RIFF":
        raise FormatError("missing RIFF signature", 0)
    if wave != b"WAVE":
        raise FormatError("missing WAVE signature", 8)
    pos = 12
    fmt = None
    while True:
        chunk = fh.read(8)
        if len(chunk) < 8:
            if fmt is None:
                raise FormatError("truncated chunk header before fmt chunk", pos + len(chunk))
            raise FormatError("no data chunk", pos + len(chunk))
        cid, size = struct.unpack("<4sI", chunk)
        body_at = pos + 8
        if cid == b"fmt ":
            body = fh.read(size)
            if len(body) < 16:
                raise FormatError("truncated fmt chunk", body_at + len(body))
            tag, channels, rate, _, align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag != 1:
                raise FormatError(f"unsupported encoding {tag}, expected PCM", body_at)
            if channels != 1:
                raise FormatError(f"{channels} channels, expected mono", body_at + 2)
            if bits != 16 or align != 2:
                raise FormatError(f"{bits}-bit samples, expected 16-bit", body_at + 14)
            fmt = rate
            if size % 2:
                fh.read(1)
            pos = body_at + size + size % 2
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", pos)
            if size % 2:
                raise FormatError("data chunk length is not a whole number of samples", pos + 4)
            return fmt, body_at, size // 2
        else:
            skip = size + size % 2
            if len(fh.read(skip)) < skip:
                raise FormatError(f"truncated {cid!r} chunk", body_at)
            pos = body_at + skip


def read_wav_pcm(path) -> tuple[np.ndarray, int]:
    """Raw int16 samples and the sample rate."""
    with open(path, "rb") as fh:
        rate, offset, n = _parse_header(fh)
        data = fh.read(2 * n)
    if len(data) < 2 * n:
        raise FormatError(f"data chunk declares {n} samples but only {len(data) // 2} present",
                          offset + len(data) - len(data) % 2)
    return np.frombuffer(data, dtype="<i2").copy(), rate


def read_wav(path) -> AudioBuffer:
    pcm, rate = read_wav_pcm(path)
    return AudioBuffer(pcm.astype(np.float64) / PCM_SCALE, rate)


def iter_wav_chunks(path, chunk_samples: int = 4410):
    """Yield ``(sample_rate, float chunk)`` pairs without loading the whole file."""
    with open(path, "rb") as fh:
        rate, offset, n = _parse_header(fh)
        remaining = n
        while remaining > 0:
            want = min(chunk_samples, remaining)
            data = fh.read(2 * want)
            if len(data) < 2 * want:
                raise FormatError("data chunk ends early", offset + 2 * (n - remaining) + len(data))
            remaining -= want
            yield rate, np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM_SCALE


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else FLOAT_FMT.format(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def reading_rows(result):
    """Readings of a :class:`~tubetac.estimator.StreamResult`, time-major, taxel-id order."""
    ids = sorted(result.tracks)
    if not ids:
        return
    n = len(result.tracks[ids[0]])
    for k in range(n):
        for key in ids:
            tr = result.tracks[key]
            yield (float(tr.times[k]), key, float(tr.freq[k]), float(tr.amplitude[k]),
                   float(tr.force[k]), str(tr.contact[k]))


def reading_record(time, key, reading) -> list:
    return [time, key, reading.freq, reading.amplitude,
            np.nan if reading.force is None else reading.force, str(reading.contact)]


def write_readings(path, result) -> None:
    write_csv(path, READINGS_COLUMNS, reading_rows(result))


def read_readings(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != READINGS_COLUMNS:
            raise FormatError(f"{path}: expected columns {', '.join(READINGS_COLUMNS)}")
        return list(reader)


def read_traces(path) -> list[ForceTrace]:
    """Wide-format traces: ``time_s`` then one ``force_n`` column per taxel id.

    Columns may be named ``<id>`` or ``force_n_<id>``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty trace file") from None
        if not header or header[0] != "time_s" or len(header) < 2:
            raise FormatError(f"{path}: first column must be time_s followed by force columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric value") from None
            if len(row) != len(header):
                raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields")
    if len(rows) < 2:
        raise FormatError(f"{path}: need at least two trace rows")
    data = np.array(rows)
    ids = [h[len("force_n_"):] if h.startswith("force_n_") else h for h in header[1:]]
    return [ForceTrace(k, data[:, 0], data[:, j + 1]) for j, k in enumerate(ids)]


def write_traces(path, traces) -> None:
    """Wide-format traces on the union of all knot times."""
    traces = sorted(traces, key=lambda tr: tr.taxel_id)
    t = np.unique(np.concatenate([tr.time for tr in traces]))
    header = ["time_s", *(f"force_n_{tr.taxel_id}" for tr in traces)]
    cols = [tr(t) for tr in traces]
    write_csv(path, header, ([float(t[k]), *(float(c[k]) for c in cols)] for k in range(t.size)))


SIDECAR_COLUMNS = ("time_s", "taxel_id", "force_n", "freq_hz", "amplitude")


def write_sidecar(path, gt) -> None:
    ids = sorted(gt.force)

    def rows():
        for k, t in enumerate(gt.times):
            for key in ids:
                yield (float(t), key, float(gt.force[key][k]), float(gt.freq[key][k]),
                       float(gt.amplitude[key][k]))

    write_csv(path, SIDECAR_COLUMNS, rows())


def write_spectrogram(path, spec) -> None:
    """Frames x bins magnitude table; the header carries the bin frequencies."""
    header = ["time_s", *(FLOAT_FMT.format(f) for f in spec.bin_freqs)]
    write_csv(path, header, ([float(t), *map(float, row)]
                             for t, row in zip(spec.frame_times, spec.magnitudes)))
