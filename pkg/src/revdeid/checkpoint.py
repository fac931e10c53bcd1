"""Flat binary checkpoints.

Layout: an ASCII magic tag naming the model kind, one format version byte,
one byte for the attribute count t, for generator files the t-byte sign
vector, then every floating-point tensor of the state dict as raw
little-endian float32 in declaration order. Integer bookkeeping entries
(batch counters) are not stored; they do not affect inference.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
import torch.nn as nn

from .core import CheckpointFormatError, CheckpointMismatchError
from .matcher import MatcherModel
from .networks import GeneratorPair, PatchCritic, UNet

MAGIC_MATCHER = b"UUNET-DA\x00"
MAGIC_GENERATOR = b"UUNET-GEN\x00"
MAGIC_CRITIC = b"UUNET-DF\x00"
FORMAT_VERSION = 1


def _float_items(module: nn.Module) -> list[torch.Tensor]:
    return [v for v in module.state_dict().values() if v.is_floating_point()]


def _dump_weights(module: nn.Module) -> bytes:
    chunks = []
    for tensor in _float_items(module):
        chunks.append(tensor.detach().numpy().astype("<f4").tobytes())
    return b"".join(chunks)


def _load_weights(module: nn.Module, buf: bytes, offset: int, path) -> int:
    for tensor in _float_items(module):
        n = tensor.numel() * 4
        if offset + n > len(buf):
            raise CheckpointFormatError(f"truncated checkpoint: {path}")
        arr = np.frombuffer(buf, dtype="<f4", count=tensor.numel(), offset=offset)
        with torch.no_grad():
            tensor.copy_(torch.from_numpy(arr.copy()).reshape(tensor.shape))
        offset += n
    return offset


def _read_header(buf: bytes, magic: bytes, path) -> tuple[int, int]:
    """Validates magic and version; returns (t, offset past header)."""
    if not buf.startswith(magic):
        raise CheckpointFormatError(f"bad magic in checkpoint: {path}")
    pos = len(magic)
    if pos + 2 > len(buf):
        raise CheckpointFormatError(f"truncated checkpoint: {path}")
    version, t = buf[pos], buf[pos + 1]
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}: {path}")
    return t, pos + 2


def _finish(offset: int, buf: bytes, path):
    if offset != len(buf):
        raise CheckpointFormatError(
            f"checkpoint has {len(buf) - offset} unexpected trailing bytes: {path}"
        )


def save_matcher(path, model: MatcherModel):
    with open(path, "wb") as f:
        f.write(MAGIC_MATCHER)
        f.write(bytes([FORMAT_VERSION, model.t]))
        f.write(_dump_weights(model))


def load_matcher(path, expect_t: int | None = None) -> MatcherModel:
    with open(path, "rb") as f:
        buf = f.read()
    t, offset = _read_header(buf, MAGIC_MATCHER, path)
    if expect_t is not None and t != expect_t:
        raise CheckpointMismatchError(
            f"matcher checkpoint has t={t}, configuration expects t={expect_t}: {path}"
        )
    model = MatcherModel(t)
    _finish(_load_weights(model, buf, offset, path), buf, path)
    model.eval()
    return model


def save_generator(path, pair: GeneratorPair):
    with open(path, "wb") as f:
        f.write(MAGIC_GENERATOR)
        f.write(bytes([FORMAT_VERSION, pair.t]))
        f.write(np.asarray(pair.sign_vector, dtype=np.int8).tobytes())
        f.write(_dump_weights(pair.encoder))
        f.write(_dump_weights(pair.decoder))


def load_generator(path, expect_t: int | None = None) -> GeneratorPair:
    with open(path, "rb") as f:
        buf = f.read()
    t, offset = _read_header(buf, MAGIC_GENERATOR, path)
    if expect_t is not None and t != expect_t:
        raise CheckpointMismatchError(
            f"generator checkpoint has t={t}, configuration expects t={expect_t}: {path}"
        )
    if offset + t > len(buf):
        raise CheckpointFormatError(f"truncated checkpoint: {path}")
    sign = np.frombuffer(buf, dtype=np.int8, count=t, offset=offset).astype(np.int64)
    offset += t
    encoder, decoder = UNet(4), UNet(3)
    offset = _load_weights(encoder, buf, offset, path)
    offset = _load_weights(decoder, buf, offset, path)
    _finish(offset, buf, path)
    encoder.eval()
    decoder.eval()
    return GeneratorPair(encoder=encoder, decoder=decoder, sign_vector=sign, t=t)


def save_critic(path, model: PatchCritic, t: int = 0):
    with open(path, "wb") as f:
        f.write(MAGIC_CRITIC)
        f.write(bytes([FORMAT_VERSION, t]))
        f.write(_dump_weights(model))


def load_critic(path) -> PatchCritic:
    with open(path, "rb") as f:
        buf = f.read()
    _, offset = _read_header(buf, MAGIC_CRITIC, path)
    model = PatchCritic()
    _finish(_load_weights(model, buf, offset, path), buf, path)
    model.eval()
    return model


def fingerprint(path) -> str:
    """Short content hash used to tie outputs to the model that made them."""
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return digest[:12]
