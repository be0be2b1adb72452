import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmpa.contour import center_chunk
from cmpa.data import (
    CRITERIA,
    DataError,
    Dataset,
    RatingRecord,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    normalize_rating,
    read_manifest,
    split_dataset,
    write_dataset,
)
from cmpa.evaluation import r_squared


@pytest.mark.parametrize("raw, top, expected", [(10, 10, 1.0), (0, 10, 0.0), (7, 10, 0.7)])
def test_normalize_rating(raw, top, expected):
    assert normalize_rating(raw, top) == pytest.approx(expected)


@pytest.mark.parametrize("raw, top", [(11, 10), (1, 0), (-1, 10)])
def test_normalize_rating_errors(raw, top):
    with pytest.raises(DataError):
        normalize_rating(raw, top)


def test_rating_record_requires_all_criteria():
    with pytest.raises(DataError):
        RatingRecord("r", {"musicality": 0.5})
    with pytest.raises(DataError):
        RatingRecord("r", {c: 1.5 for c in CRITERIA})


@pytest.mark.parametrize("n, sizes", [(100, (80, 10, 10)), (10, (8, 1, 1)), (57, (47, 5, 5))])
def test_split_sizes(n, sizes):
    split = split_dataset([f"id{i}" for i in range(n)], seed=0)
    assert (len(split.train_ids), len(split.val_ids), len(split.test_ids)) == sizes


def test_split_deterministic_and_seed_dependent():
    ids = [f"id{i}" for i in range(50)]
    assert split_dataset(ids, 3) == split_dataset(ids, 3)
    assert split_dataset(ids, 3) != split_dataset(ids, 4)


def test_split_too_small():
    with pytest.raises(DataError):
        split_dataset(list("abcdefghi"), 0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(10, 300), seed=st.integers(0, 10**6))
def test_split_is_partition(n, seed):
    ids = [f"r{i}" for i in range(n)]
    split = split_dataset(ids, seed)
    parts = [set(split.train_ids), set(split.val_ids), set(split.test_ids)]
    assert sum(len(p) for p in parts) == n
    assert set().union(*parts) == set(ids)
    assert len(split.val_ids) == len(split.test_ids) == n // 10


def _errors_spec(**kw):
    return SyntheticSpec(n_recordings=20, min_len=200, max_len=400, noise_std=0.0, seed=1, **kw)


def test_zero_jitter_gives_perfect_ratings():
    _, records = generate_synthetic(_errors_spec(pitch_jitter_max=0.0, timing_jitter_max=0.0))
    for r in records:
        assert r.ratings == {c: 1.0 for c in CRITERIA}


def test_saturated_jitter_gives_zero_rating():
    # Jitter drawn from [0, 100 * d_max]; essentially every draw exceeds d_max.
    _, records = generate_synthetic(_errors_spec(pitch_jitter_max=100.0))
    values = [r.ratings["note_accuracy"] for r in records]
    assert sum(v == 0.0 for v in values) >= 18


def test_synthetic_determinism():
    a = generate_synthetic(_errors_spec())
    b = generate_synthetic(_errors_spec())
    for ca, cb in zip(a[0], b[0]):
        assert ca.values.tobytes() == cb.values.tobytes()
    assert a[1] == b[1]


def test_synthetic_lengths_and_range():
    contours, records = generate_synthetic(SyntheticSpec(n_recordings=30, min_len=500, max_len=900, seed=2))
    assert len(contours) == len(records) == 30
    for c in contours:
        assert 500 <= len(c) <= 900
        assert c.values.min() >= 0 and c.values.max() <= 1


def test_synthetic_spec_validation():
    with pytest.raises(DataError):
        SyntheticSpec(min_len=10, max_len=5)
    with pytest.raises(DataError):
        SyntheticSpec(noise_std=-1)
    with pytest.raises(DataError):
        SyntheticSpec(n_recordings=0)


def test_synthetic_ratings_learnable_by_nearest_neighbour():
    # Neighbours are found among sorted chunk values: the raw contour samples
    # compared as distributions, which ignores where in the melody a chunk starts.
    from sklearn.neighbors import KNeighborsRegressor

    spec = SyntheticSpec(n_recordings=300, noise_std=0.05, seed=0)
    contours, records = generate_synthetic(spec)
    ds = Dataset.from_lists(contours, records)
    split = split_dataset(ds.ids, 0)
    train = list(split.train_ids) + list(split.val_ids)

    def features(ids):
        return np.stack([np.sort(center_chunk(ds.contours[i], 1000).values) for i in ids])

    knn = KNeighborsRegressor(n_neighbors=10).fit(features(train), ds.ratings(train, "note_accuracy"))
    pred = knn.predict(features(split.test_ids))
    assert r_squared(ds.ratings(split.test_ids, "note_accuracy"), pred) > 0


def test_manifest_round_trip(tmp_path):
    contours, records = generate_synthetic(_errors_spec())
    manifest = write_dataset(tmp_path, contours, records)
    loaded = load_dataset(manifest)
    assert loaded.ids == [r.recording_id for r in records]
    for c in contours:
        np.testing.assert_allclose(loaded.contours[c.recording_id].values, c.values, atol=1e-12)
    for r in records:
        assert loaded.records[r.recording_id] == r


def test_manifest_max_rating_column(tmp_path):
    (tmp_path / "a.txt").write_text("440\n")
    (tmp_path / "m.csv").write_text(
        "recording_id,f0_path,musicality,note_accuracy,rhythm_accuracy,max_rating\na,a.txt,5,10,0,10\n"
    )
    [(record, path)] = read_manifest(tmp_path / "m.csv")
    assert record.ratings == {"musicality": 0.5, "note_accuracy": 1.0, "rhythm_accuracy": 0.0}
    assert path == tmp_path / "a.txt"


def test_manifest_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("recording_id,f0_path\n")
    with pytest.raises(DataError, match="lacks"):
        read_manifest(tmp_path / "bad.csv")
    (tmp_path / "over.csv").write_text(
        "recording_id,f0_path,musicality,note_accuracy,rhythm_accuracy\na,a.txt,2,0.5,0.5\n"
    )
    with pytest.raises(DataError):
        read_manifest(tmp_path / "over.csv")
