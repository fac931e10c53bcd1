"""Shared domain types and pixel-level operations.

Everything downstream (matcher, networks, losses, stego, pipeline) speaks in
terms of these types: uint8 frames, integer boxes, float crops in [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

CROP_SIZE = 64
FRAME_NAME_FORMAT = "frame_%06d.png"
_FRAME_NAME_RE = re.compile(r"^frame_(\d{6})\.png$")

# Label vector layout. Component 0 is identity; the rest are soft labels.
ATTRIBUTE_NAMES = ("id", "gender", "ethnicity", "hairstyle", "age")
DEFAULT_T = 4


class ContractError(ValueError):
    """An argument violated a documented precondition."""


class BoundsError(ContractError):
    """A box does not fit inside its frame."""


class CapacityError(ContractError):
    """A payload does not fit in the carrier frame."""


class MessageFormatError(ContractError):
    """A recovered message does not parse; carries the failing offset."""

    def __init__(self, text: str, offset: int):
        super().__init__(f"malformed message at offset {offset}: {text}")
        self.offset = offset


class StreamCorruptionError(ContractError):
    """An embedded bitstream is internally inconsistent."""


class ConfigError(ContractError):
    """A configuration value is out of its legal range."""


class StatisticUndefinedError(ContractError):
    """A statistic has no defined value for the given input."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries term name and step."""

    def __init__(self, term: str, step: int | None = None):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss in term '{term}'{where}")
        self.term = term
        self.step = step


class CheckpointFormatError(RuntimeError):
    """A checkpoint file is unreadable or truncated."""


class CheckpointMismatchError(CheckpointFormatError):
    """A checkpoint is valid but incompatible with the requested model."""


@dataclass
class BoundingBox:
    """Axis-aligned pixel box, top-left origin, inclusive of (x, y)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ContractError(f"box {name} must be an integer, got {v!r}")
            setattr(self, name, int(v))
        if self.x < 0 or self.y < 0:
            raise ContractError(f"box origin must be non-negative, got ({self.x}, {self.y})")
        if self.w < 1 or self.h < 1:
            raise ContractError(f"box sides must be at least 1, got {self.w}x{self.h}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class Frame:
    """One video frame: H x W x 3 uint8 pixels plus its stream index."""

    pixels: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[2] != 3:
            raise ContractError("frame pixels must be an HxWx3 array")
        if p.dtype != np.uint8:
            raise ContractError(f"frame pixels must be uint8, got {p.dtype}")
        if p.shape[0] < 64 or p.shape[1] < 64:
            raise ContractError(f"frame must be at least 64x64, got {p.shape[0]}x{p.shape[1]}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class TrackletIndex(tuple):
    """(subject, sequence, frame) coordinates of a crop inside the corpus."""

    def __new__(cls, subject: int, sequence: int, frame: int):
        return super().__new__(cls, (int(subject), int(sequence), int(frame)))

    @property
    def subject(self) -> int:
        return self[0]

    @property
    def sequence(self) -> int:
        return self[1]

    @property
    def frame(self) -> int:
        return self[2]


@dataclass
class Histogram:
    """Per-channel pixel intensity densities, channels concatenated."""

    bins: np.ndarray
    bin_count: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 1 or self.bins.size % self.bin_count != 0:
            raise ContractError("histogram length must be a multiple of bin_count")
        per_channel = self.bins.reshape(-1, self.bin_count)
        sums = per_channel.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ContractError("each channel of a histogram must sum to 1")


def validate_labels(labels: np.ndarray, t: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (t,):
        raise ContractError(f"label vector must have length {t}, got shape {labels.shape}")
    if np.any(labels < 0) or not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be non-negative integers")
    return labels.astype(np.int64)


def validate_sign_vector(s, t: int | None = None) -> np.ndarray:
    """Checks a per-attribute steering vector: entries in {-1, 0, 1}, identity -1."""
    s = np.asarray(s, dtype=np.int64)
    if s.ndim != 1 or s.size < 1:
        raise ConfigError("sign vector must be a non-empty 1-d sequence")
    if t is not None and s.size != t:
        raise ConfigError(f"sign vector must have length {t}, got {s.size}")
    if not np.all(np.isin(s, (-1, 0, 1))):
        raise ConfigError(f"sign vector entries must be -1, 0 or 1, got {s.tolist()}")
    if s[0] != -1:
        raise ConfigError("identity component of the sign vector must be -1")
    return s


def parse_sign_vector(text: str, t: int | None = None) -> np.ndarray:
    try:
        parts = [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise ConfigError(f"sign vector must be comma-separated integers, got {text!r}")
    return validate_sign_vector(np.array(parts), t)


def validate_crop(crop: np.ndarray) -> np.ndarray:
    crop = np.asarray(crop)
    if crop.shape != (CROP_SIZE, CROP_SIZE, 3):
        raise ContractError(f"crop must be {CROP_SIZE}x{CROP_SIZE}x3, got {crop.shape}")
    if crop.dtype != np.float32:
        crop = crop.astype(np.float32)
    if crop.min() < 0.0 or crop.max() > 1.0:
        raise ContractError("crop values must lie in [0, 1]")
    return crop


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and edge clamping.

    Resampling to the source size is an exact identity, which keeps
    crop/paste round trips lossless for already-64x64 boxes.
    """
    src = np.asarray(src, dtype=np.float32)
    h, w = src.shape[:2]
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    top = src[y0c][:, x0c] * (1 - fx)[None, :, None] + src[y0c][:, x1c] * fx[None, :, None]
    bot = src[y1c][:, x0c] * (1 - fx)[None, :, None] + src[y1c][:, x1c] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return out.astype(np.float32)


def _check_box(frame: Frame, box: BoundingBox):
    if box.x + box.w > frame.width or box.y + box.h > frame.height:
        raise BoundsError(
            f"box ({box.x}, {box.y}, {box.w}, {box.h}) exceeds "
            f"frame {frame.width}x{frame.height}"
        )


def expand_box(box: BoundingBox, frame: Frame, margin: float) -> BoundingBox:
    """Grows a box by `margin` times its side on each edge, clipped to the frame."""
    if margin < 0:
        raise ConfigError(f"margin must be non-negative, got {margin}")
    if margin == 0:
        return box
    px = int(round(box.w * margin))
    py = int(round(box.h * margin))
    x0 = max(0, box.x - px)
    y0 = max(0, box.y - py)
    x1 = min(frame.width, box.x + box.w + px)
    y1 = min(frame.height, box.y + box.h + py)
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def crop_roi(frame: Frame, box: BoundingBox, margin: float = 0.0) -> np.ndarray:
    """Extracts a box from a frame as a 64x64x3 float crop in [0, 1].

    Args:
        frame: source frame.
        box: region to extract; must lie inside the frame.
        margin: optional relative expansion of the box before extraction.

    Returns:
        (64, 64, 3) float32 array.
    """
    _check_box(frame, box)
    box = expand_box(box, frame, margin)
    region = frame.pixels[box.y : box.y + box.h, box.x : box.x + box.w].astype(np.float32)
    region /= 255.0
    return resize_bilinear(region, CROP_SIZE, CROP_SIZE)


def paste_roi(frame: Frame, box: BoundingBox, crop: np.ndarray) -> Frame:
    """Writes a crop back into a copy of the frame, resampled to the box size."""
    _check_box(frame, box)
    crop = validate_crop(crop)
    region = resize_bilinear(crop, box.h, box.w)
    quant = np.clip(np.rint(region * 255.0), 0, 255).astype(np.uint8)
    pixels = frame.pixels.copy()
    pixels[box.y : box.y + box.h, box.x : box.x + box.w] = quant
    return Frame(pixels=pixels, frame_id=frame.frame_id)


def soft_histogram_t(values: torch.Tensor, bin_count: int) -> torch.Tensor:
    """Differentiable histogram over the last axis of `values`.

    Each value in [0, 1] spreads over bins with a triangular kernel centered
    on the bin midpoints; the result is normalized to a density.
    """
    if bin_count < 2:
        raise ConfigError(f"bin_count must be at least 2, got {bin_count}")
    centers = (torch.arange(bin_count, dtype=values.dtype) + 0.5) / bin_count
    weights = torch.clamp(1.0 - (values.unsqueeze(-1) - centers).abs() * bin_count, min=0.0)
    counts = weights.sum(dim=-2)
    return counts / counts.sum(dim=-1, keepdim=True)


def histogram(crop: np.ndarray, bin_count: int = 16) -> Histogram:
    """Per-channel soft intensity histogram of a crop, channels concatenated."""
    crop = validate_crop(crop)
    values = torch.from_numpy(crop.reshape(-1, 3).T.copy()).double()
    dens = soft_histogram_t(values, bin_count)
    return Histogram(bins=dens.reshape(-1).numpy(), bin_count=bin_count)


def read_frame(path, frame_id: int | None = None) -> Frame:
    """Loads a PNG as an RGB frame; the id defaults to the number in the name."""
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if frame_id is None:
        m = _FRAME_NAME_RE.match(str(path).rsplit("/", 1)[-1])
        frame_id = int(m.group(1)) if m else 0
    return Frame(pixels=pixels, frame_id=frame_id)


def write_frame(frame: Frame, path):
    Image.fromarray(frame.pixels, mode="RGB").save(path, format="PNG")


def frame_filename(frame_id: int) -> str:
    return FRAME_NAME_FORMAT % frame_id


def parse_frame_id(name: str) -> int | None:
    m = _FRAME_NAME_RE.match(name)
    return int(m.group(1)) if m else None
