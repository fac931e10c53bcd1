"""Procedural face corpus for desk-scale experiments.

Every label is drawn on the image, so small networks can actually learn
them from pixels: identity fixes the face geometry, ethnicity the skin
palette, hairstyle the hair shape, gender a beard versus red lips, age
forehead lines. Sequences differ in background tint and head placement,
frames within a sequence in pose jitter and illumination. Fully
deterministic for a given seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BoundingBox,
    ConfigError,
    ContractError,
    Frame,
    crop_roi,
    frame_filename,
    read_frame,
    write_frame,
)

SKIN_PALETTES = np.array(
    [[232, 196, 160], [188, 140, 98], [122, 86, 60]], dtype=np.float64
)
HAIR_COLORS = np.array(
    [[42, 32, 26], [92, 62, 32], [150, 122, 62], [28, 28, 34]], dtype=np.float64
)
LIP_COLOR = np.array([205, 72, 92], dtype=np.float64)
MOUTH_COLOR = np.array([70, 40, 38], dtype=np.float64)
EYE_WHITE = np.array([240, 240, 238], dtype=np.float64)
PUPIL_COLOR = np.array([30, 26, 24], dtype=np.float64)

CATEGORY_COUNTS = {"gender": 2, "ethnicity": 3, "hairstyle": 3, "age": 3}


@dataclass
class SyntheticSpec:
    subjects: int = 40
    sequences_per_subject: int = 2
    frames_per_sequence: int = 8
    t: int = 4
    frame_size: int = 96

    def __post_init__(self):
        if self.subjects < 2:
            raise ConfigError("need at least 2 subjects")
        if self.sequences_per_subject < 1 or self.frames_per_sequence < 1:
            raise ConfigError("need at least one sequence and one frame per sequence")
        if self.t not in (4, 5):
            raise ConfigError(f"t must be 4 or 5, got {self.t}")
        if self.frame_size < 96:
            raise ConfigError("frame size below 96 leaves no room for head placement")


@dataclass
class SyntheticDataset:
    """In-memory corpus: full frames, face boxes, crops, labels, tracklets."""

    spec: SyntheticSpec
    frames: np.ndarray
    boxes: np.ndarray
    crops: np.ndarray
    labels: np.ndarray
    index: np.ndarray
    seed: int = 0
    _row_map: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.crops.shape[0]

    def rows_of(self, subject: int, sequence: int) -> np.ndarray:
        if not self._row_map:
            # built locally and swapped in whole: dataclasses.replace copies
            # share the dict object, so it must never hold a partial state
            built: dict = {}
            for row, (i, j, _) in enumerate(self.index):
                built.setdefault((int(i), int(j)), []).append(row)
            self._row_map = {k: np.array(v) for k, v in built.items()}
        return self._row_map[(subject, sequence)]

    def frame_obj(self, row: int) -> Frame:
        return Frame(pixels=self.frames[row], frame_id=int(self.index[row, 2]))

    def box_obj(self, row: int) -> BoundingBox:
        return BoundingBox(*(int(v) for v in self.boxes[row]))


def subject_labels(subject: int, t: int) -> np.ndarray:
    """Deterministic label assignment; cycles categories so each is populated."""
    values = [
        subject,
        subject % 2,
        (subject // 2) % 3,
        (subject // 6) % 3,
        (subject // 18) % 3,
    ]
    return np.array(values[:t], dtype=np.int64)


def _ellipse_alpha(size: int, cx: float, cy: float, ax: float, ay: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
    return np.clip((1.0 - d) * 4.0, 0.0, 1.0)


def _blend(img: np.ndarray, alpha: np.ndarray, color: np.ndarray):
    img += alpha[:, :, None] * (color[None, None, :] - img)


def _render_face(
    size: int,
    geom: dict,
    labels: np.ndarray,
    t: int,
    cx: float,
    cy: float,
    illum: float,
    noise: np.ndarray,
) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = geom["bg_color"][None, None, :]
    img += np.linspace(-8.0, 8.0, size)[None, :, None]

    gender = int(labels[1])
    hairstyle = int(labels[3])
    age = int(labels[4]) if t >= 5 else 0

    # gender widens or narrows the face on top of the identity geometry
    ax = geom["ax"] * (1.10 if gender == 0 else 0.90)
    ay = geom["ay"]
    skin = SKIN_PALETTES[int(labels[2])] + geom["skin_tint"]
    if t >= 5 and age == 2:
        skin = skin * 0.92 + 18.0  # older: paler, lower contrast

    if hairstyle > 0:
        hx, hy = ax + 4.0, ay + 5.0
        if hairstyle == 2:
            hx, hy = ax + 6.0, ay + 7.0
        hair = _ellipse_alpha(size, cx, cy - 2.0, hx, hy)
        if hairstyle == 1:
            rows = np.arange(size, dtype=np.float64)
            hair *= (rows < cy - 2.0)[:, None]  # cap: upper half only
        _blend(img, hair, geom["hair_color"])

    _blend(img, _ellipse_alpha(size, cx, cy, ax, ay), skin)

    if gender == 0:
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        jaw = _ellipse_alpha(size, cx, cy, ax * 0.96, ay * 0.96)
        jaw *= np.clip((yy - (cy + geom["mouth_y"] * 0.3)) / 4.0, 0.0, 1.0)
        img *= 1.0 - 0.5 * jaw[:, :, None]  # beard shading

    brow_y = cy + geom["eye_dy"] - 3.5
    for side in (-1, 1):
        ex = cx + side * geom["eye_dx"]
        _blend(img, _ellipse_alpha(size, ex, brow_y, geom["eye_r"] + 1.6, geom["brow_h"]),
               geom["hair_color"] * 0.7)
        _blend(img, _ellipse_alpha(size, ex, cy + geom["eye_dy"], geom["eye_r"] + 1.2,
                                   geom["eye_r"]), EYE_WHITE)
        _blend(img, _ellipse_alpha(size, ex, cy + geom["eye_dy"], geom["eye_r"] * 0.55,
                                   geom["eye_r"] * 0.55), PUPIL_COLOR)

    _blend(img, _ellipse_alpha(size, cx, cy + geom["nose_len"] * 0.5, 1.2,
                               geom["nose_len"]), skin * 0.72)

    mouth_color = LIP_COLOR if gender == 1 else MOUTH_COLOR
    mouth_h = 3.2 if gender == 1 else 1.2
    _blend(img, _ellipse_alpha(size, cx, cy + geom["mouth_y"], geom["mouth_w"], mouth_h),
           mouth_color)

    if t >= 5 and age > 0:
        for line in range(age):
            ly = cy - ay * 0.55 + 3.0 * line
            _blend(img, _ellipse_alpha(size, cx, ly, ax * 0.5, 0.8), skin * 0.7)

    img *= illum
    img += noise
    return np.clip(img, 0, 255).astype(np.uint8)


def _subject_geometry(seed: int, subject: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11, subject]))
    return {
        "ax": rng.uniform(15.0, 21.0),
        "ay": rng.uniform(19.0, 25.0),
        "eye_dx": rng.uniform(7.0, 12.0),
        "eye_dy": rng.uniform(-10.0, -5.0),
        "eye_r": rng.uniform(1.7, 2.8),
        "brow_h": rng.uniform(0.7, 1.5),
        "mouth_y": rng.uniform(8.0, 13.0),
        "mouth_w": rng.uniform(5.0, 10.0),
        "nose_len": rng.uniform(4.0, 8.0),
        "skin_tint": rng.uniform(-12.0, 12.0, size=3),
        "hair_color": HAIR_COLORS[rng.integers(len(HAIR_COLORS))],
    }


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int = 0) -> SyntheticDataset:
    """Renders the full corpus. Same spec and seed always give the same bytes."""
    n = spec.subjects * spec.sequences_per_subject * spec.frames_per_sequence
    size = spec.frame_size
    frames = np.empty((n, size, size, 3), dtype=np.uint8)
    boxes = np.empty((n, 4), dtype=np.int64)
    crops = np.empty((n, 64, 64, 3), dtype=np.float32)
    labels = np.empty((n, spec.t), dtype=np.int64)
    index = np.empty((n, 3), dtype=np.int64)

    row = 0
    for i in range(spec.subjects):
        geom = _subject_geometry(seed, i)
        lab = subject_labels(i, spec.t)
        for j in range(spec.sequences_per_subject):
            seq_rng = np.random.default_rng(np.random.SeedSequence([seed, 13, i, j]))
            geom["bg_color"] = seq_rng.uniform(202.0, 218.0, size=3)
            base_cx = size / 2.0 + seq_rng.uniform(-3.0, 3.0)
            base_cy = size / 2.0 + seq_rng.uniform(-3.0, 3.0)
            for k in range(spec.frames_per_sequence):
                frame_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, 17, i, j, k])
                )
                cx = base_cx + frame_rng.uniform(-2.0, 2.0)
                cy = base_cy + frame_rng.uniform(-2.0, 2.0)
                illum = frame_rng.uniform(0.92, 1.08)
                noise = frame_rng.normal(0.0, 2.0, size=(size, size, 3))
                pixels = _render_face(size, geom, lab, spec.t, cx, cy, illum, noise)

                half_w, half_h = geom["ax"] + 7.0, geom["ay"] + 9.0
                x0 = max(0, int(round(cx - half_w)))
                y0 = max(0, int(round(cy - half_h)))
                x1 = min(size, int(round(cx + half_w)))
                y1 = min(size, int(round(cy + half_h)))
                box = BoundingBox(x0, y0, x1 - x0, y1 - y0)

                frame = Frame(pixels=pixels, frame_id=k)
                frames[row] = pixels
                boxes[row] = box.as_tuple()
                crops[row] = crop_roi(frame, box)
                labels[row] = lab
                index[row] = (i, j, k)
                row += 1

    return SyntheticDataset(
        spec=spec, frames=frames, boxes=boxes, crops=crops,
        labels=labels, index=index, seed=seed,
    )


def save_dataset(dataset: SyntheticDataset, root):
    """Writes subjects/<i>/sequences/<j>/frame_<k>.png plus label metadata.

    Each sequence directory also gets a boxes.jsonl sidecar so the pipeline
    can run on the directory alone with the metadata-backed detector.
    """
    os.makedirs(root, exist_ok=True)
    records = []
    sidecars: dict[tuple[int, int], list] = {}
    for row in range(len(dataset)):
        i, j, k = (int(v) for v in dataset.index[row])
        seq_dir = os.path.join(root, "subjects", str(i), "sequences", str(j))
        os.makedirs(seq_dir, exist_ok=True)
        write_frame(dataset.frame_obj(row), os.path.join(seq_dir, frame_filename(k)))
        box = [int(v) for v in dataset.boxes[row]]
        records.append({
            "subject": i, "sequence": j, "frame": k,
            "labels": [int(v) for v in dataset.labels[row]],
            "boxes": [box],
        })
        sidecars.setdefault((i, j), []).append({"frame": k, "boxes": [box]})

    with open(os.path.join(root, "labels.jsonl"), "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    for (i, j), rows in sidecars.items():
        seq_dir = os.path.join(root, "subjects", str(i), "sequences", str(j))
        with open(os.path.join(seq_dir, "boxes.jsonl"), "w") as f:
            for rec in rows:
                f.write(json.dumps(rec) + "\n")


def load_dataset(root) -> SyntheticDataset:
    """Reads a corpus written by save_dataset; crops are recomputed."""
    labels_path = os.path.join(root, "labels.jsonl")
    if not os.path.exists(labels_path):
        raise ContractError(f"no labels.jsonl under {root}")
    with open(labels_path) as f:
        records = [json.loads(line) for line in f if line.strip()]
    if not records:
        raise ContractError(f"labels.jsonl under {root} is empty")
    records.sort(key=lambda r: (r["subject"], r["sequence"], r["frame"]))

    t = len(records[0]["labels"])
    subjects = 1 + max(r["subject"] for r in records)
    sequences = 1 + max(r["sequence"] for r in records)
    per_seq = 1 + max(r["frame"] for r in records)

    n = len(records)
    frames = boxes = crops = None
    labels = np.empty((n, t), dtype=np.int64)
    index = np.empty((n, 3), dtype=np.int64)
    for row, rec in enumerate(records):
        i, j, k = rec["subject"], rec["sequence"], rec["frame"]
        path = os.path.join(root, "subjects", str(i), "sequences", str(j), frame_filename(k))
        frame = read_frame(path, frame_id=k)
        if frames is None:
            size = frame.height
            frames = np.empty((n, size, size, 3), dtype=np.uint8)
            boxes = np.empty((n, 4), dtype=np.int64)
            crops = np.empty((n, 64, 64, 3), dtype=np.float32)
        box = BoundingBox(*rec["boxes"][0])
        frames[row] = frame.pixels
        boxes[row] = box.as_tuple()
        crops[row] = crop_roi(frame, box)
        labels[row] = rec["labels"]
        index[row] = (i, j, k)

    spec = SyntheticSpec(
        subjects=subjects, sequences_per_subject=sequences,
        frames_per_sequence=per_seq, t=t, frame_size=frames.shape[1],
    )
    return SyntheticDataset(
        spec=spec, frames=frames, boxes=boxes, crops=crops, labels=labels, index=index,
    )


def nearest_neighbor_id_accuracy(dataset: SyntheticDataset) -> float:
    """Sanity check that identity is recoverable from raw crop pixels.

    Holds out the last frame of every sequence and classifies it by the
    nearest remaining crop in plain L2. Labels that are not learnable from
    pixels would make the whole exercise meaningless.
    """
    last = dataset.spec.frames_per_sequence - 1
    holdout = dataset.index[:, 2] == last
    train = ~holdout
    flat = dataset.crops.reshape(len(dataset), -1)
    train_flat, train_ids = flat[train], dataset.labels[train, 0]
    correct = 0
    test_rows = np.flatnonzero(holdout)
    for row in test_rows:
        d2 = ((train_flat - flat[row]) ** 2).sum(axis=1)
        correct += int(train_ids[int(np.argmin(d2))] == dataset.labels[row, 0])
    return correct / len(test_rows)
