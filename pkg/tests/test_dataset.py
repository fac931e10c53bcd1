import numpy as np
import pytest

from revdeid.core import ConfigError, ContractError, crop_roi
from revdeid.dataset import (
    CATEGORY_COUNTS,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset,
    nearest_neighbor_id_accuracy,
    save_dataset,
    subject_labels,
)


def small_spec():
    return SyntheticSpec(subjects=4, sequences_per_subject=2, frames_per_sequence=2)


# ---------------------------------------------------------------- spec


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(subjects=1)
    with pytest.raises(ConfigError):
        SyntheticSpec(t=3)
    with pytest.raises(ConfigError):
        SyntheticSpec(frame_size=64)
    with pytest.raises(ConfigError):
        SyntheticSpec(frames_per_sequence=0)
    SyntheticSpec(t=5)


def test_subject_label_layout():
    assert subject_labels(0, 4).tolist() == [0, 0, 0, 0]
    assert subject_labels(7, 4).tolist() == [7, 1, 0, 1]
    assert subject_labels(19, 5).tolist() == [19, 1, 0, 0, 1]
    # identity is always the subject number itself
    for i in range(25):
        assert subject_labels(i, 4)[0] == i


def test_category_counts_are_respected():
    for i in range(60):
        lab = subject_labels(i, 5)
        assert 0 <= lab[1] < CATEGORY_COUNTS["gender"]
        assert 0 <= lab[2] < CATEGORY_COUNTS["ethnicity"]
        assert 0 <= lab[3] < CATEGORY_COUNTS["hairstyle"]
        assert 0 <= lab[4] < CATEGORY_COUNTS["age"]


# ---------------------------------------------------------------- generation


def test_generation_shapes_and_ranges(tiny_dataset):
    ds = tiny_dataset
    n = 8 * 2 * 3
    assert len(ds) == n
    assert ds.frames.shape == (n, 96, 96, 3) and ds.frames.dtype == np.uint8
    assert ds.crops.shape == (n, 64, 64, 3) and ds.crops.dtype == np.float32
    assert ds.crops.min() >= 0.0 and ds.crops.max() <= 1.0
    assert ds.labels.shape == (n, 4)
    assert ds.index.shape == (n, 3)


def test_generation_is_deterministic():
    a = generate_synthetic_dataset(small_spec(), seed=3)
    b = generate_synthetic_dataset(small_spec(), seed=3)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.boxes, b.boxes)
    assert np.array_equal(a.crops, b.crops)
    assert np.array_equal(a.labels, b.labels)


def test_seed_changes_the_rendering():
    a = generate_synthetic_dataset(small_spec(), seed=3)
    b = generate_synthetic_dataset(small_spec(), seed=4)
    assert not np.array_equal(a.frames, b.frames)
    # labels are seed-independent by construction
    assert np.array_equal(a.labels, b.labels)


def test_labels_constant_within_subject(tiny_dataset):
    ds = tiny_dataset
    for i in range(ds.spec.subjects):
        rows = np.flatnonzero(ds.index[:, 0] == i)
        assert (ds.labels[rows] == ds.labels[rows[0]]).all()
        assert ds.labels[rows[0], 0] == i


def test_sequences_differ_in_appearance(tiny_dataset):
    ds = tiny_dataset
    r0 = ds.rows_of(0, 0)
    r1 = ds.rows_of(0, 1)
    assert not np.array_equal(ds.frames[r0[0]], ds.frames[r1[0]])


def test_frames_within_sequence_differ(tiny_dataset):
    ds = tiny_dataset
    rows = ds.rows_of(1, 0)
    assert not np.array_equal(ds.frames[rows[0]], ds.frames[rows[1]])


def test_boxes_fit_inside_frames(tiny_dataset):
    ds = tiny_dataset
    for row in range(len(ds)):
        x, y, w, h = ds.boxes[row]
        assert w >= 1 and h >= 1
        assert x >= 0 and y >= 0
        assert x + w <= 96 and y + h <= 96


def test_crops_match_recomputation(tiny_dataset):
    ds = tiny_dataset
    for row in (0, 7, 23, len(ds) - 1):
        want = crop_roi(ds.frame_obj(row), ds.box_obj(row))
        assert np.array_equal(ds.crops[row], want)


def test_rows_of_partitions_the_dataset(tiny_dataset):
    ds = tiny_dataset
    seen = []
    for i in range(ds.spec.subjects):
        for j in range(ds.spec.sequences_per_subject):
            rows = ds.rows_of(i, j)
            assert rows.size == ds.spec.frames_per_sequence
            seen.extend(rows.tolist())
    assert sorted(seen) == list(range(len(ds)))


def test_identity_is_visually_recoverable(tiny_dataset):
    assert nearest_neighbor_id_accuracy(tiny_dataset) > 0.9


# ---------------------------------------------------------------- persistence


def test_save_load_roundtrip(tmp_path, tiny_dataset):
    root = tmp_path / "corpus"
    save_dataset(tiny_dataset, root)
    back = load_dataset(root)
    assert np.array_equal(back.frames, tiny_dataset.frames)
    assert np.array_equal(back.boxes, tiny_dataset.boxes)
    assert np.array_equal(back.crops, tiny_dataset.crops)
    assert np.array_equal(back.labels, tiny_dataset.labels)
    assert np.array_equal(back.index, tiny_dataset.index)
    assert back.spec.subjects == tiny_dataset.spec.subjects


def test_save_writes_sequence_sidecars(tmp_path, tiny_dataset):
    root = tmp_path / "corpus"
    save_dataset(tiny_dataset, root)
    sidecar = root / "subjects" / "0" / "sequences" / "1" / "boxes.jsonl"
    assert sidecar.exists()
    lines = [l for l in sidecar.read_text().splitlines() if l.strip()]
    assert len(lines) == tiny_dataset.spec.frames_per_sequence


def test_load_requires_labels_file(tmp_path):
    with pytest.raises(ContractError) as exc:
        load_dataset(tmp_path)
    assert "labels.jsonl" in str(exc.value)
