"""Rating records, manifests, recording-level splits, and a synthetic corpus.

The synthetic corpus stands in for a private audition dataset: every
recording is a performance of the same seeded "score" (a monophonic note
sequence), rendered with a per-recording amount of pitch wobble and note
timing error. Ratings are deterministic functions of the realized errors:

* ``note_accuracy   = 1 - clamp(pitch_dev / d_max, 0, 1)``
* ``rhythm_accuracy = 1 - clamp(timing_dev / t_max, 0, 1)``
* ``musicality      = 1 - clamp((pitch_dev / d_max + timing_dev / t_max) / 2, 0, 1)``

where ``pitch_dev`` is the mean absolute deviation (semitones) of voiced
frames from their nominal note and ``timing_dev`` is the mean relative
error of note durations. Gaussian noise of ``noise_std`` is then added and
the result clamped to [0, 1].

Notes are rendered legato by default (``gap_frames=0``). Unvoiced gaps between
notes put large jumps to zero into every chunk, which drown the sub-semitone
wobble that carries the note-accuracy signal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .contour import (
    MAX_MIDI,
    PitchContour,
    load_f0_file,
    normalized_midi_to_hz,
    track_to_contour,
    write_f0_file,
)

CRITERIA = ("musicality", "note_accuracy", "rhythm_accuracy")
MANIFEST_FIELDS = ("recording_id", "f0_path") + CRITERIA


class DataError(ValueError):
    """Invalid ratings, manifests, or split requests."""


@dataclass(frozen=True)
class RatingRecord:
    recording_id: str
    ratings: dict

    def __post_init__(self):
        missing = set(CRITERIA) - set(self.ratings)
        if missing:
            raise DataError(f"{self.recording_id}: missing ratings {sorted(missing)}")
        for name, value in self.ratings.items():
            if not 0.0 <= value <= 1.0:
                raise DataError(f"{self.recording_id}: rating {name}={value} outside [0, 1]")


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple


def normalize_rating(raw: float, max_rating: float) -> float:
    if max_rating <= 0:
        raise DataError(f"max_rating must be positive, got {max_rating}")
    if not 0 <= raw <= max_rating:
        raise DataError(f"rating {raw} outside [0, {max_rating}]")
    return raw / max_rating


def split_dataset(ids, seed: int) -> DatasetSplit:
    """Seeded 8:1:1 split; validation and test each get ``n // 10`` ids."""
    ids = list(ids)
    if len(ids) < 10:
        raise DataError(f"need at least 10 recordings to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataError("recording ids must be unique")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    k = len(ids) // 10
    n_train = len(ids) - 2 * k
    return DatasetSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + k]),
        tuple(shuffled[n_train + k:]),
    )


@dataclass(frozen=True)
class PerformanceErrors:
    pitch_dev: float
    timing_dev: float
    d_max: float
    t_max: float

    @property
    def pitch_ratio(self):
        return self.pitch_dev / self.d_max

    @property
    def timing_ratio(self):
        return self.timing_dev / self.t_max


def _saturate(x):
    return 1.0 - min(max(x, 0.0), 1.0)


DEFAULT_CRITERION_FNS: dict[str, Callable[[PerformanceErrors], float]] = {
    "musicality": lambda e: _saturate((e.pitch_ratio + e.timing_ratio) / 2),
    "note_accuracy": lambda e: _saturate(e.pitch_ratio),
    "rhythm_accuracy": lambda e: _saturate(e.timing_ratio),
}


@dataclass
class SyntheticSpec:
    n_recordings: int = 600
    min_len: int = 1500
    max_len: int = 4000
    noise_std: float = 0.05
    seed: int = 0
    n_notes: int = 64
    d_max: float = 1.0
    t_max: float = 0.5
    criterion_fns: dict = field(default_factory=lambda: dict(DEFAULT_CRITERION_FNS))
    # Jitter levels are drawn uniformly from [0, max]; ``None`` means d_max / t_max.
    pitch_jitter_max: float | None = None
    timing_jitter_max: float | None = None
    # unvoiced frames closing each note; 0 renders legato playing
    gap_frames: int = 0
    wobble_width: int = 9

    def __post_init__(self):
        if self.n_recordings < 1:
            raise DataError("n_recordings must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError("need 1 <= min_len <= max_len")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if self.d_max <= 0 or self.t_max <= 0:
            raise DataError("d_max and t_max must be positive")
        if self.gap_frames < 0 or self.wobble_width < 1:
            raise DataError("gap_frames must be non-negative and wobble_width positive")
        if set(self.criterion_fns) != set(CRITERIA):
            raise DataError(f"criterion_fns must define exactly {CRITERIA}")


def _make_score(rng, n_notes):
    steps = rng.choice([-4, -2, -1, 1, 2, 3, 5], size=n_notes)
    pitches = np.empty(n_notes)
    p = 72.0
    for i, step in enumerate(steps):
        p = p + step
        if not 60 <= p <= 84:
            p = p - 2 * step
        pitches[i] = p
    units = rng.choice([1.0, 1.0, 2.0, 2.0, 3.0, 4.0], size=n_notes)
    return pitches, units


def _wobble(rng, n, width=9):
    noise = rng.standard_normal(n + width - 1)
    smooth = np.convolve(noise, np.ones(width) / width, mode="valid")
    return smooth / np.mean(np.abs(smooth))


def render_performance(pitches, units, length, pitch_jitter, timing_jitter, rng, spec: SyntheticSpec):
    """Render one performance; returns ``(midi_values, pitch_dev, timing_dev)``.

    ``midi_values`` holds MIDI pitch per frame, 0 for unvoiced frames.
    """
    frames_per_unit = length / units.sum()
    nominal = np.maximum(spec.gap_frames + 2, np.round(units * frames_per_unit)).astype(int)
    signs = rng.choice([-1.0, 1.0], size=nominal.size)
    rel = timing_jitter * signs * rng.uniform(0.5, 1.5, size=nominal.size)
    actual = np.maximum(spec.gap_frames + 2, np.round(nominal * (1.0 + rel))).astype(int)
    timing_dev = float(np.mean(np.abs(actual - nominal) / nominal))

    midi = np.zeros(int(actual.sum()))
    voiced = np.zeros(midi.size, dtype=bool)
    pos = 0
    for pitch, dur in zip(pitches, actual):
        midi[pos:pos + dur - spec.gap_frames] = pitch
        voiced[pos:pos + dur - spec.gap_frames] = True
        pos += dur
    dev = pitch_jitter * _wobble(rng, int(voiced.sum()), spec.wobble_width)
    midi[voiced] += dev
    pitch_dev = float(np.mean(np.abs(dev)))

    midi = midi[:spec.max_len]
    if midi.size < spec.min_len:
        midi = np.concatenate([midi, np.zeros(spec.min_len - midi.size)])
    return midi, pitch_dev, timing_dev


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(contours, records)`` for ``spec``; bit-identical for equal specs."""
    root = np.random.default_rng(spec.seed)
    score_rng, perf_rng = (np.random.default_rng(s) for s in root.integers(0, 2**63, size=2))
    pitches, units = _make_score(score_rng, spec.n_notes)
    p_max = spec.d_max if spec.pitch_jitter_max is None else spec.pitch_jitter_max
    t_max = spec.t_max if spec.timing_jitter_max is None else spec.timing_jitter_max
    width = len(str(spec.n_recordings - 1))

    contours, records = [], []
    for i in range(spec.n_recordings):
        rid = f"syn{i:0{width}d}"
        length = perf_rng.uniform(spec.min_len, spec.max_len)
        pitch_jitter = perf_rng.uniform(0.0, p_max)
        timing_jitter = perf_rng.uniform(0.0, t_max)
        midi, pitch_dev, timing_dev = render_performance(
            pitches, units, length, pitch_jitter, timing_jitter, perf_rng, spec
        )
        errors = PerformanceErrors(pitch_dev, timing_dev, spec.d_max, spec.t_max)
        ratings = {}
        for name in CRITERIA:
            value = spec.criterion_fns[name](errors)
            if spec.noise_std > 0:
                value += perf_rng.normal(0.0, spec.noise_std)
            ratings[name] = float(min(max(value, 0.0), 1.0))
        contours.append(PitchContour(rid, np.clip(midi, 0.0, MAX_MIDI) / MAX_MIDI))
        records.append(RatingRecord(rid, ratings))
    return contours, records


@dataclass
class Dataset:
    """Contours and ratings keyed by recording id, in manifest order."""

    contours: dict
    records: dict

    @property
    def ids(self):
        return list(self.records)

    def ratings(self, ids, criterion):
        return np.array([self.records[i].ratings[criterion] for i in ids])

    @classmethod
    def from_lists(cls, contours, records):
        return cls({c.recording_id: c for c in contours}, {r.recording_id: r for r in records})


def read_manifest(path):
    """Parse a manifest into ``[(RatingRecord, f0_path)]``.

    ``f0_path`` is resolved relative to the manifest's directory. A
    ``max_rating`` column, when present, divides every rating on its row.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest header lacks {sorted(missing)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                raw = {c: float(row[c]) for c in CRITERIA}
                max_rating = row.get("max_rating")
                if max_rating not in (None, ""):
                    raw = {c: normalize_rating(v, float(max_rating)) for c, v in raw.items()}
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            record = RatingRecord(row["recording_id"], raw)
            rows.append((record, path.parent / row["f0_path"]))
    if not rows:
        raise DataError(f"{path}: manifest has no records")
    return rows


def load_dataset(manifest_path) -> Dataset:
    contours, records = {}, {}
    for record, f0_path in read_manifest(manifest_path):
        track = load_f0_file(f0_path)
        contour = track_to_contour(track)
        contours[record.recording_id] = PitchContour(record.recording_id, contour.values)
        records[record.recording_id] = record
    return Dataset(contours, records)


def write_dataset(out_dir, contours, records) -> Path:
    """Write F0 files under ``out_dir/f0`` plus ``out_dir/manifest.csv``."""
    out_dir = Path(out_dir)
    (out_dir / "f0").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for contour, record in zip(contours, records):
            rel = f"f0/{contour.recording_id}.txt"
            write_f0_file(out_dir / rel, [normalized_midi_to_hz(v) for v in contour.values])
            writer.writerow([record.recording_id, rel] + [repr(record.ratings[c]) for c in CRITERIA])
    return manifest
