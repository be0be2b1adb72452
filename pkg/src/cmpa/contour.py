"""Fundamental-frequency tracks, normalized MIDI pitch contours, and chunking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE_HZ = 44100.0
HOP_SAMPLES = 256
MAX_MIDI = 127


class ContourError(ValueError):
    """Invalid frequency, track, or contour."""


class F0ParseError(ContourError):
    """An F0 file line could not be parsed as a number."""


@dataclass(frozen=True)
class F0Track:
    recording_id: str
    frequencies_hz: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ
    hop_samples: int = HOP_SAMPLES

    def __post_init__(self):
        freqs = np.asarray(self.frequencies_hz, dtype=np.float64)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ContourError(f"track {self.recording_id!r} is empty")
        if not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
            raise ContourError(f"track {self.recording_id!r} has negative or non-finite frequencies")
        if np.any(freqs >= self.sample_rate_hz / 2):
            raise ContourError(f"track {self.recording_id!r} has frequencies at or above Nyquist")
        object.__setattr__(self, "frequencies_hz", freqs)


@dataclass(frozen=True)
class PitchContour:
    recording_id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ContourError(f"contour {self.recording_id!r} is empty")
        if np.any(values < 0) or np.any(values > 1):
            raise ContourError(f"contour {self.recording_id!r} has values outside [0, 1]")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Chunk:
    recording_id: str
    values: np.ndarray
    start_index: int


def hz_to_normalized_midi(freq_hz: float) -> float:
    """Map a frequency in Hz to MIDI pitch divided by 127.

    0 Hz is the unvoiced sentinel and maps to exactly 0. Pitches outside
    MIDI [0, 127] are clamped.
    """
    if not freq_hz >= 0:
        raise ContourError(f"frequency must be non-negative, got {freq_hz}")
    if freq_hz == 0:
        return 0.0
    midi = 69.0 + 12.0 * math.log2(freq_hz / 440.0)
    return min(max(midi, 0.0), MAX_MIDI) / MAX_MIDI


def normalized_midi_to_hz(value: float) -> float:
    """Inverse of :func:`hz_to_normalized_midi` on (0, 1]; 0 stays 0."""
    if value == 0:
        return 0.0
    return 440.0 * 2.0 ** ((value * MAX_MIDI - 69.0) / 12.0)


def track_to_contour(track: F0Track) -> PitchContour:
    freqs = track.frequencies_hz
    voiced = freqs > 0
    values = np.zeros_like(freqs)
    midi = 69.0 + 12.0 * np.log2(freqs[voiced] / 440.0)
    values[voiced] = np.clip(midi, 0.0, MAX_MIDI) / MAX_MIDI
    return PitchContour(track.recording_id, values)


def _slice(contour: PitchContour, start: int, chunk_len: int) -> Chunk:
    values = contour.values[start:start + chunk_len]
    if values.size < chunk_len:
        values = np.concatenate([values, np.zeros(chunk_len - values.size)])
    return Chunk(contour.recording_id, values, start)


def random_chunk(contour: PitchContour, chunk_len: int, rng: np.random.Generator) -> Chunk:
    """Chunk with a uniformly drawn start; short contours are zero-padded at the end."""
    if chunk_len < 1:
        raise ContourError("chunk_len must be positive")
    n = len(contour)
    start = int(rng.integers(0, n - chunk_len + 1)) if n >= chunk_len else 0
    return _slice(contour, start, chunk_len)


def center_chunk(contour: PitchContour, chunk_len: int) -> Chunk:
    if chunk_len < 1:
        raise ContourError("chunk_len must be positive")
    return _slice(contour, max(0, len(contour) - chunk_len) // 2, chunk_len)


def spaced_chunks(contour: PitchContour, chunk_len: int, k: int) -> list[Chunk]:
    """``k`` deterministic chunks with evenly spaced start positions."""
    if k < 1:
        raise ContourError("k must be positive")
    span = max(0, len(contour) - chunk_len)
    if k == 1:
        return [center_chunk(contour, chunk_len)]
    starts = sorted({round(i * span / (k - 1)) for i in range(k)})
    return [_slice(contour, s, chunk_len) for s in starts]


def load_f0_file(path) -> F0Track:
    """Read a plain-text F0 file: one Hz value per line, stem is the recording id."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"F0 file not found: {path}")
    freqs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            freqs.append(float(line))
        except ValueError:
            raise F0ParseError(f"{path}:{lineno}: cannot parse {line!r}") from None
    return F0Track(path.stem, np.asarray(freqs, dtype=np.float64))


def write_f0_file(path, frequencies_hz) -> None:
    path = Path(path)
    path.write_text("".join(f"{float(f)!r}\n" for f in frequencies_hz), encoding="utf-8")
