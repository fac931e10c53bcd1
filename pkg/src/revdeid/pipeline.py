"""Frame-level de-identification and reversal.

De-identification detects faces, replaces each box with the encoder output,
and hides the box list inside the frame itself. Reversal therefore needs
only the public frame and the private decoder: boxes come out of the
steganographic channel, not from a detector or any side file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import (
    BoundingBox,
    CapacityError,
    ConfigError,
    ContractError,
    Frame,
    crop_roi,
    expand_box,
    parse_frame_id,
    paste_roi,
    read_frame,
    write_frame,
)
from .checkpoint import fingerprint, load_generator
from .networks import GeneratorPair, UNet, decode, encode
from .stego import embed_boxes, extract_boxes

SIDECAR_NAME = "boxes.jsonl"


class OracleDetector:
    """Detector stand-in backed by generation metadata.

    Real detection models are out of scope; synthetic sequences ship a
    boxes.jsonl sidecar mapping frame ids to known face boxes, which this
    detector replays with confidence 1.0.
    """

    def __init__(self, boxes_by_frame: dict[int, list[BoundingBox]]):
        self.boxes_by_frame = boxes_by_frame

    @classmethod
    def from_sidecar(cls, seq_dir) -> "OracleDetector":
        path = os.path.join(seq_dir, SIDECAR_NAME)
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        mapping: dict[int, list[BoundingBox]] = {}
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                mapping[int(rec["frame"])] = [BoundingBox(*b) for b in rec["boxes"]]
        return cls(mapping)

    @classmethod
    def from_dataset(cls, dataset, subject: int, sequence: int) -> "OracleDetector":
        # frame ids repeat across sequences, so the mapping is per sequence
        mapping: dict[int, list[BoundingBox]] = {}
        for row in dataset.rows_of(subject, sequence):
            mapping.setdefault(int(dataset.index[row, 2]), []).append(dataset.box_obj(int(row)))
        return cls(mapping)

    def __call__(self, frame: Frame) -> list[tuple[BoundingBox, float]]:
        return [(box, 1.0) for box in self.boxes_by_frame.get(frame.frame_id, [])]


def derive_noise_seed(seed: int, frame_id: int, box_index: int) -> int:
    """Stable per-box seed so streams are reproducible and order-free."""
    ss = np.random.SeedSequence([int(seed), int(frame_id), int(box_index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def deidentify_frame(
    frame: Frame,
    detector,
    pair: GeneratorPair,
    seed: int = 0,
    margin: float = 0.0,
) -> Frame:
    """Returns the public version of a frame: every detected face box is
    replaced by the encoder output and the box list is embedded in the
    blue-channel LSBs."""
    boxes: list[BoundingBox] = []
    out = frame
    for k, (box, _conf) in enumerate(detector(frame)):
        box = expand_box(box, frame, margin)
        crop = crop_roi(out, box)
        public_crop = encode(pair.encoder, crop, derive_noise_seed(seed, frame.frame_id, k))
        out = paste_roi(out, box, public_crop)
        boxes.append(box)
    return embed_boxes(out, boxes)


def reverse_frame(public_frame: Frame, decoder: UNet) -> Frame:
    """Reconstructs the original faces from a public frame alone."""
    out = public_frame
    for box in extract_boxes(public_frame):
        crop = crop_roi(public_frame, box)
        out = paste_roi(out, box, decode(decoder, crop))
    return out


@dataclass
class PipelineConfig:
    mode: str
    checkpoint: str
    seed: int = 0
    margin: float = 0.0
    detector: object = None

    def __post_init__(self):
        if self.mode not in ("deidentify", "reverse"):
            raise ConfigError(f"mode must be 'deidentify' or 'reverse', got {self.mode!r}")
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")


def list_stream_frames(in_dir) -> list[str]:
    names = []
    for name in sorted(os.listdir(in_dir)):
        if parse_frame_id(name) is not None:
            names.append(name)
    return names


def process_stream(in_dir, out_dir, config: PipelineConfig) -> dict:
    """Runs one mode over every frame_*.png in a directory.

    Per-frame failures (unreadable files, payload overflow, corrupt
    embedded streams) are recorded and skipped; the stream keeps going.
    Returns the summary that is also written to out_dir/summary.json.
    """
    pair = load_generator(config.checkpoint)
    ckpt_print = fingerprint(config.checkpoint)

    names = list_stream_frames(in_dir)
    # an empty stream is a valid (if pointless) input, not an error
    detector = config.detector
    if names and config.mode == "deidentify" and detector is None:
        detector = OracleDetector.from_sidecar(in_dir)

    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "frames": 0,
        "faces": 0,
        "failed_frames": 0,
        "mode": config.mode,
        "checkpoint_fingerprint": ckpt_print,
        "failures": [],
    }
    for name in names:
        try:
            frame = read_frame(os.path.join(in_dir, name))
            if config.mode == "deidentify":
                out = deidentify_frame(frame, detector, pair, config.seed, config.margin)
                faces = len(extract_boxes(out))
            else:
                boxes = extract_boxes(frame)
                out = reverse_frame(frame, pair.decoder)
                faces = len(boxes)
        except (OSError, ContractError, CapacityError) as e:
            summary["failed_frames"] += 1
            summary["failures"].append({"frame": name, "reason": str(e)})
            continue
        write_frame(out, os.path.join(out_dir, name))
        summary["frames"] += 1
        summary["faces"] += faces
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return summary
