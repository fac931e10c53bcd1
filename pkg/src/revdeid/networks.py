"""Encoder/decoder pair and the patch critic.

Both halves of the pair share one U-shaped topology: four stride-2 encoder
levels (64, 128, 256, 512 filters) mirrored by four transposed-conv levels
with skip concatenation, ending in a sigmoid so outputs live in [0, 1].
The de-identifying encoder takes the crop plus one uniform-noise channel;
the private decoder sees only the three channels of the public output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .core import CROP_SIZE, ConfigError, ContractError, validate_crop, validate_sign_vector

DEFAULT_CLIP = 0.01


def _down(in_ch: int, out_ch: int, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)]
    if norm:
        layers.append(nn.InstanceNorm2d(out_ch, affine=True))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _up(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """U-shaped image-to-image network, 64x64 in, 64x64x3 out."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.down1 = _down(in_channels, 64, norm=False)
        self.down2 = _down(64, 128)
        self.down3 = _down(128, 256)
        self.down4 = _down(256, 512)
        self.up1 = _up(512, 256)
        self.up2 = _up(512, 128)
        self.up3 = _up(256, 64)
        self.up4 = _up(128, 64)
        self.head = nn.Sequential(nn.Conv2d(64, 3, 3, padding=1), nn.Sigmoid())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d1 = self.down1(x)
        d2 = self.down2(d1)
        d3 = self.down3(d2)
        d4 = self.down4(d3)
        u1 = self.up1(d4)
        u2 = self.up2(torch.cat([u1, d3], dim=1))
        u3 = self.up3(torch.cat([u2, d2], dim=1))
        u4 = self.up4(torch.cat([u3, d1], dim=1))
        return self.head(u4)


class PatchCritic(nn.Module):
    """Convolutional critic scoring overlapping patches of a crop.

    Four stride-2 layers shrink 64x64 input to a 4x4 score grid; the scalar
    score is the grid mean. No normalization layers, so clipping every
    parameter into [-delta, delta] bounds the whole function.
    """

    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 64, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 128, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(128, 256, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(256, 512, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.score = nn.Conv2d(512, 1, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.score(self.features(x))


@dataclass
class GeneratorPair:
    """The trained double-U: public encoder, private decoder, steering metadata."""

    encoder: UNet
    decoder: UNet
    sign_vector: np.ndarray = field(default_factory=lambda: np.array([-1, 1, 1, 1]))
    t: int = 4

    def __post_init__(self):
        self.sign_vector = validate_sign_vector(self.sign_vector, self.t)


def build_generator_pair(sign_vector=None, t: int = 4) -> GeneratorPair:
    if sign_vector is None:
        sign_vector = np.array([-1] + [1] * (t - 1))
    return GeneratorPair(encoder=UNet(4), decoder=UNet(3), sign_vector=sign_vector, t=t)


def assemble_encoder_input(crop: np.ndarray, seed: int) -> np.ndarray:
    """Stacks a crop with one uniform-noise channel drawn from `seed`."""
    crop = validate_crop(crop)
    noise = np.random.default_rng(seed).random((CROP_SIZE, CROP_SIZE), dtype=np.float32)
    return np.concatenate([crop, noise[:, :, None]], axis=2)


def to_tensor(crops: np.ndarray) -> torch.Tensor:
    """(H, W, C) or (B, H, W, C) numpy to a (B, C, H, W) float tensor."""
    arr = np.asarray(crops, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ContractError(f"expected 3- or 4-d crop array, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def to_crop(batch: torch.Tensor) -> np.ndarray:
    """Inverse of to_tensor: (B, C, H, W) tensor to (B, H, W, C) float32."""
    arr = batch.detach().cpu().numpy().transpose(0, 2, 3, 1)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def encode(model: UNet, crop: np.ndarray, noise_seed: int) -> np.ndarray:
    """De-identify one crop: returns the public 64x64x3 output."""
    if model.in_channels != 4:
        raise ContractError("encode expects the 4-channel encoder network")
    stacked = assemble_encoder_input(crop, noise_seed)
    model.eval()
    with torch.no_grad():
        out = model(to_tensor(stacked))
    return to_crop(out)[0]


def decode(model: UNet, public_crop: np.ndarray) -> np.ndarray:
    """Reconstruct one crop from its public form. No noise channel is used."""
    if model.in_channels != 3:
        raise ContractError("decode expects the 3-channel decoder network")
    public_crop = validate_crop(public_crop)
    model.eval()
    with torch.no_grad():
        out = model(to_tensor(public_crop))
    return to_crop(out)[0]


def criticize(model: PatchCritic, images) -> torch.Tensor:
    """Scalar critic score per sample: mean of the patch score grid."""
    if isinstance(images, np.ndarray):
        images = to_tensor(images)
    grid = model(images)
    return grid.mean(dim=(1, 2, 3))


def clip_weights(model: nn.Module, delta: float = DEFAULT_CLIP):
    """Clamps every parameter into [-delta, delta], in place."""
    if delta <= 0:
        raise ConfigError(f"clip bound must be positive, got {delta}")
    with torch.no_grad():
        for p in model.parameters():
            p.clamp_(-delta, delta)


def max_abs_weight(model: nn.Module) -> float:
    with torch.no_grad():
        return max((float(p.abs().max()) for p in model.parameters()), default=0.0)
