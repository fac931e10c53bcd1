"""Box-list steganography.

The set of de-identified regions is serialized as ASCII ("n," then
"x,y,w,h," per box) and hidden in the least significant bits of the blue
channel, so reversal needs nothing but the public frame itself.
The exact bit layout is documented in docs/stego-format.md.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import (
    BoundingBox,
    CapacityError,
    ContractError,
    Frame,
    MessageFormatError,
    StreamCorruptionError,
)

HEADER_BITS = 32


def capacity_bits(frame: Frame) -> int:
    """Number of carrier bits in a frame: one per pixel, blue channel only."""
    return frame.height * frame.width


def encode_message(boxes: list[BoundingBox]) -> str:
    """Serializes a box list to the comma-terminated decimal wire form."""
    parts = [str(len(boxes))]
    for b in boxes:
        if not isinstance(b, BoundingBox):
            b = BoundingBox(*b)
        parts.extend(str(v) for v in b.as_tuple())
    return ",".join(parts) + ","


def decode_message(text: str) -> list[BoundingBox]:
    """Parses the wire form back into boxes.

    Raises MessageFormatError (with the byte offset of the first bad
    character) on anything that is not exactly "n," followed by n
    "x,y,w,h," groups.
    """
    pos = 0

    def read_int() -> int:
        nonlocal pos
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if pos == start:
            raise MessageFormatError("expected a digit", pos)
        if pos == len(text) or text[pos] != ",":
            raise MessageFormatError("expected ','", pos)
        value = int(text[start:pos])
        pos += 1
        return value

    count = read_int()
    boxes = []
    for _ in range(count):
        group_start = pos
        x, y, w, h = read_int(), read_int(), read_int(), read_int()
        try:
            boxes.append(BoundingBox(x, y, w, h))
        except ContractError as e:
            raise MessageFormatError(str(e), group_start)
    if pos != len(text):
        raise MessageFormatError("trailing data after last box", pos)
    return boxes


def _message_bits(message: str) -> np.ndarray:
    try:
        data = message.encode("latin-1")
    except UnicodeEncodeError:
        raise ContractError("message characters must fit in one byte each")
    payload = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    header = np.unpackbits(np.frombuffer(struct.pack(">I", payload.size), dtype=np.uint8))
    return np.concatenate([header, payload])


def embed(frame: Frame, message: str) -> Frame:
    """Hides a message in the blue LSBs, row-major from the top-left pixel.

    Layout: a 32-bit big-endian payload bit count, then each character as
    8 bits, most significant bit first. Pixels beyond the payload keep
    their original values, and no other channel or bit is touched.
    """
    bits = _message_bits(message)
    cap = capacity_bits(frame)
    if bits.size > cap:
        raise CapacityError(
            f"message needs {bits.size} bits but the frame carries only {cap}"
        )
    pixels = frame.pixels.copy()
    blue = pixels[:, :, 2].reshape(-1)
    blue[: bits.size] = (blue[: bits.size] & 0xFE) | bits
    return Frame(pixels=pixels, frame_id=frame.frame_id)


def extract(frame: Frame) -> str:
    """Reads back a message embedded by `embed`."""
    blue_lsb = (frame.pixels[:, :, 2].reshape(-1) & 1).astype(np.uint8)
    (payload_bits,) = struct.unpack(">I", np.packbits(blue_lsb[:HEADER_BITS]).tobytes())
    if payload_bits > capacity_bits(frame) - HEADER_BITS:
        raise StreamCorruptionError(
            f"declared payload of {payload_bits} bits exceeds frame capacity"
        )
    if payload_bits % 8 != 0:
        raise StreamCorruptionError(
            f"declared payload of {payload_bits} bits is not a whole number of bytes"
        )
    payload = blue_lsb[HEADER_BITS : HEADER_BITS + payload_bits]
    return np.packbits(payload).tobytes().decode("latin-1")


def embed_boxes(frame: Frame, boxes: list[BoundingBox]) -> Frame:
    return embed(frame, encode_message(boxes))


def extract_boxes(frame: Frame) -> list[BoundingBox]:
    return decode_message(extract(frame))
