"""Pairwise attribute agreement matcher.

One small CNN per attribute looks at two crops stacked along channels and
answers a single binary question: do the crops agree on this attribute?
The stack of those answers is the agreement vector the rest of the system
steers against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import ConfigError, ContractError, validate_crop
from .networks import to_tensor

PROB_EPS = 1e-7


def agreement_vector(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """Component-wise equality of two label vectors as floats in {0, 1}."""
    a, b = np.asarray(labels_a), np.asarray(labels_b)
    if a.shape != b.shape:
        raise ContractError(f"label shape mismatch {a.shape} vs {b.shape}")
    return (a == b).astype(np.float32)


def _conv_block(in_ch: int, out_ch: int, stride: int) -> list[nn.Module]:
    return [
        nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1),
        # running-stats update keeps 0.8 of the old value per batch
        nn.BatchNorm2d(out_ch, momentum=0.2),
        nn.LeakyReLU(0.2, inplace=True),
        nn.Dropout(0.25),
    ]


class _PairNet(nn.Module):
    """Binary agree/disagree classifier over a 6-channel crop pair."""

    def __init__(self):
        super().__init__()
        layers: list[nn.Module] = []
        layers += _conv_block(6, 16, stride=2)
        layers += _conv_block(16, 64, stride=1)
        layers += _conv_block(64, 128, stride=1)
        layers += _conv_block(128, 64, stride=2)
        layers += _conv_block(64, 64, stride=2)
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(64 * 8 * 8, 128),
            nn.ReLU(inplace=True),
            nn.Linear(128, 1),
            nn.Sigmoid(),
        )

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(pair))


class MatcherModel(nn.Module):
    """t independent pairwise matchers; forward returns (B, t) agreements."""

    def __init__(self, t: int = 4):
        super().__init__()
        if t < 1:
            raise ConfigError(f"attribute count must be positive, got {t}")
        self.t = t
        self.heads = nn.ModuleList(_PairNet() for _ in range(t))

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        return torch.cat([head(pair) for head in self.heads], dim=1)


def pair_tensor(crops_a: np.ndarray, crops_b: np.ndarray) -> torch.Tensor:
    """Stacks two crop batches channel-wise into the (B, 6, 64, 64) pair form."""
    return torch.cat([to_tensor(crops_a), to_tensor(crops_b)], dim=1)


def predict(model: MatcherModel, crop_a: np.ndarray, crop_b: np.ndarray) -> np.ndarray:
    """Agreement vector for one crop pair, each entry in (0, 1)."""
    pair = pair_tensor(validate_crop(crop_a), validate_crop(crop_b))
    model.eval()
    with torch.no_grad():
        out = model(pair)
    return out[0].numpy().astype(np.float32)


def cross_entropy(target, prediction) -> torch.Tensor:
    """Binary cross entropy summed over attributes, averaged over the batch.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs, so exact
    0/1 outputs stay finite.
    """
    b = torch.as_tensor(target)
    p = torch.as_tensor(prediction)
    if b.shape != p.shape:
        raise ContractError(f"shape mismatch {tuple(b.shape)} vs {tuple(p.shape)}")
    if b.numel() == 0:
        raise ContractError("cross entropy of an empty batch is undefined")
    p = torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    per_item = -(b * torch.log(p) + (1.0 - b) * torch.log(1.0 - p))
    return per_item.sum(dim=-1).mean()


@dataclass
class Phase1Config:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    steps_per_epoch: int | None = None
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ConfigError("batch_size must be an even number of pairs, at least 2")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


def _augment_crops(batch: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Train-time jitter: photometric shifts, pixel noise, small translations.

    Matchers trained on raw crops are trivially fooled by imperceptible
    perturbations, which lets the phase-2 encoder "anonymize" without
    changing the face. Jitter forces the matchers to key on structure, so
    fooling them requires visible change.
    """
    b = batch.shape[0]

    def u(lo, hi):
        return torch.tensor(rng.uniform(lo, hi, size=(b, 1, 1, 1)), dtype=batch.dtype)

    out = (batch - 0.5) * u(0.9, 1.1) + 0.5 + u(-0.08, 0.08)
    noise = torch.tensor(rng.standard_normal(size=tuple(batch.shape)), dtype=batch.dtype)
    out = out + u(0.0, 0.06) * noise
    padded = torch.nn.functional.pad(out, (3, 3, 3, 3), mode="replicate")
    size = batch.shape[-1]
    shifts = rng.integers(-3, 4, size=(b, 2))
    for i in range(b):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        out[i] = padded[i, :, 3 + dy : 3 + dy + size, 3 + dx : 3 + dx + size]
    return out.clamp_(0.0, 1.0)


def _group_by_value(column: np.ndarray) -> dict[int, np.ndarray]:
    return {int(v): np.flatnonzero(column == v) for v in np.unique(column)}


def sample_label_pairs(
    labels: np.ndarray, label_index: int, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draws `count` crop index pairs, half agreeing and half disagreeing
    on the given attribute. Returns (idx_a, idx_b, target)."""
    column = labels[:, label_index]
    groups = _group_by_value(column)
    values = sorted(groups)
    if len(values) < 2:
        raise ConfigError(
            f"attribute {label_index} has a single category; cannot sample disagreeing pairs"
        )
    rich = [v for v in values if groups[v].size >= 2]
    if not rich:
        raise ConfigError(f"attribute {label_index} has no category with two samples")

    idx_a = np.empty(count, dtype=np.int64)
    idx_b = np.empty(count, dtype=np.int64)
    target = np.zeros(count, dtype=np.float32)
    half = count // 2
    for row in range(count):
        if row < half:
            v = rich[rng.integers(len(rich))]
            pick = rng.choice(groups[v], size=2, replace=False)
            target[row] = 1.0
        else:
            va, vb = rng.choice(len(values), size=2, replace=False)
            pick = (
                groups[values[va]][rng.integers(groups[values[va]].size)],
                groups[values[vb]][rng.integers(groups[values[vb]].size)],
            )
        idx_a[row], idx_b[row] = int(pick[0]), int(pick[1])
    order = rng.permutation(count)
    return idx_a[order], idx_b[order], target[order]


def train_phase1(dataset, config: Phase1Config | None = None, log=None) -> MatcherModel:
    """Trains the per-attribute matchers on labeled crops.

    The dataset must expose `crops` (N, 64, 64, 3) float32 and `labels`
    (N, t) integer arrays. Each attribute trains independently on balanced
    agree/disagree pairs. Deterministic for a fixed config seed.
    """
    config = config or Phase1Config()
    labels = np.asarray(dataset.labels)
    t = labels.shape[1]
    for m in range(t):
        if np.unique(labels[:, m]).size < 2:
            raise ConfigError(f"attribute {m} has a single category in the dataset")

    torch.manual_seed(config.seed)
    model = MatcherModel(t)
    rng = np.random.default_rng(config.seed)
    crops = to_tensor(np.asarray(dataset.crops))
    n = crops.shape[0]
    steps = config.steps_per_epoch or max(1, int(np.ceil(n / config.batch_size)))

    for m in range(t):
        head = model.heads[m]
        opt = torch.optim.Adam(head.parameters(), lr=config.lr)
        head.train()
        for epoch in range(config.epochs):
            total = 0.0
            for _ in range(steps):
                ia, ib, tgt = sample_label_pairs(labels, m, config.batch_size, rng)
                # random side swap; agreement is order-free, the net should be too
                swap = rng.random(config.batch_size) < 0.5
                ia2 = np.where(swap, ib, ia)
                ib2 = np.where(swap, ia, ib)
                side_a, side_b = crops[ia2], crops[ib2]
                if config.augment:
                    side_a = _augment_crops(side_a, rng)
                    side_b = _augment_crops(side_b, rng)
                pair = torch.cat([side_a, side_b], dim=1)
                pred = head(pair)
                loss = cross_entropy(torch.from_numpy(tgt)[:, None], pred)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach())
            if log:
                log(f"phase1 attribute {m} epoch {epoch + 1}/{config.epochs} "
                    f"loss {total / steps:.4f}")
        head.eval()
    model.eval()
    return model


def pair_accuracy(
    model: MatcherModel,
    crops: np.ndarray,
    labels: np.ndarray,
    label_index: int,
    pairs: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of balanced held-out pairs the matcher classifies correctly."""
    ia, ib, tgt = sample_label_pairs(np.asarray(labels), label_index, pairs, rng)
    batch = pair_tensor(np.asarray(crops)[ia], np.asarray(crops)[ib])
    model.eval()
    with torch.no_grad():
        pred = model(batch)[:, label_index].numpy()
    return float(np.mean((pred >= 0.5) == (tgt >= 0.5)))
