"""Adversarial training of the encoder/decoder pair.

The critic takes several clipped steps per generator step; the generator
then minimizes the weighted six-term objective through the frozen
attribute matcher. Every term is logged per epoch and any non-finite
value aborts the run naming the term and step.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import ConfigError, DivergenceError
from .losses import LossWeights, batch_histograms, loss_adv_critic, loss_adv_generator, \
    loss_ano, loss_con, loss_dis, loss_div, loss_mse, loss_total
from .matcher import MatcherModel
from .networks import (
    DEFAULT_CLIP,
    GeneratorPair,
    PatchCritic,
    build_generator_pair,
    clip_weights,
    criticize,
    max_abs_weight,
    to_tensor,
)

HISTORY_TERMS = ("mse", "adv", "ano", "con", "div", "dis", "total", "adv_critic")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 12
    lr: float = 2e-4
    critic_steps: int = 5
    decoder_steps: int = 2
    clip_delta: float = DEFAULT_CLIP
    hist_bins: int = 16
    seed: int = 0
    steps_per_epoch: int | None = 8
    weights: LossWeights = field(default_factory=LossWeights)
    sign_vector: tuple = (-1, 1, 1, 1)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 4:
            raise ConfigError(f"batch_size must be at least 4, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.critic_steps < 1:
            raise ConfigError(f"critic_steps must be at least 1, got {self.critic_steps}")
        if self.decoder_steps < 0:
            raise ConfigError(f"decoder_steps must be non-negative, got {self.decoder_steps}")
        if self.clip_delta <= 0:
            raise ConfigError(f"clip_delta must be positive, got {self.clip_delta}")
        if self.hist_bins < 2:
            raise ConfigError(f"hist_bins must be at least 2, got {self.hist_bins}")


@dataclass
class TripletBatch:
    """Row indices for one batch: anchors plus their two partners."""

    anchor: np.ndarray
    same_seq: np.ndarray
    cross_seq: np.ndarray


def _eligible_subjects(dataset) -> np.ndarray:
    subjects = np.unique(dataset.index[:, 0])
    keep = []
    for i in subjects:
        if np.unique(dataset.index[dataset.index[:, 0] == i, 1]).size >= 2:
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def sample_batch(dataset, batch_size: int, rng: np.random.Generator) -> TripletBatch:
    """Draws anchors with a same-sequence and a cross-sequence partner each.

    Subjects with a single sequence cannot provide cross-sequence partners
    and are skipped (with a one-time warning from train_phase2)."""
    eligible = _eligible_subjects(dataset)
    if eligible.size == 0:
        raise ConfigError("no subject has two sequences; cross-sequence loss is undefined")

    anchor = np.empty(batch_size, dtype=np.int64)
    same_seq = np.empty(batch_size, dtype=np.int64)
    cross_seq = np.empty(batch_size, dtype=np.int64)
    for b in range(batch_size):
        i = int(eligible[rng.integers(eligible.size)])
        seqs = np.unique(dataset.index[dataset.index[:, 0] == i, 1])
        j = int(seqs[rng.integers(seqs.size)])
        rows = dataset.rows_of(i, j)
        a = int(rows[rng.integers(rows.size)])
        if rows.size > 1:
            others = rows[rows != a]
            s = int(others[rng.integers(others.size)])
        else:
            s = a
        j2 = int(seqs[seqs != j][rng.integers(seqs.size - 1)])
        rows2 = dataset.rows_of(i, j2)
        c = int(rows2[rng.integers(rows2.size)])
        anchor[b], same_seq[b], cross_seq[b] = a, s, c
    return TripletBatch(anchor=anchor, same_seq=same_seq, cross_seq=cross_seq)


@dataclass
class Phase2Result:
    pair: GeneratorPair
    critic: PatchCritic
    history: dict[str, list[float]]


def _noise_like(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    n = rng.random((x.shape[0], 1, x.shape[2], x.shape[3]), dtype=np.float32)
    return torch.from_numpy(n)


def train_phase2(
    dataset,
    matcher: MatcherModel,
    config: TrainConfig | None = None,
    on_critic_step=None,
    on_epoch=None,
) -> Phase2Result:
    """Runs the full adversarial phase against a frozen matcher.

    Each step takes `critic_steps` clipped critic updates, one joint
    encoder/decoder update on the six-term objective, then `decoder_steps`
    decoder-only reconstruction updates against the new encoder.

    Deterministic for a fixed config: two runs with the same seed produce
    identical weights and identical histories. Callbacks: on_critic_step
    gets (step, max_abs_weight) after each clipped critic update, on_epoch
    gets (epoch, epoch-mean terms, pair) for logging or snapshots.
    """
    config = config or TrainConfig()
    sign = np.asarray(config.sign_vector, dtype=np.int64)
    if sign.size != matcher.t:
        raise ConfigError(
            f"sign vector has {sign.size} entries but the matcher judges {matcher.t}"
        )

    eligible = _eligible_subjects(dataset)
    all_subjects = np.unique(dataset.index[:, 0])
    if eligible.size < all_subjects.size:
        skipped = sorted(set(all_subjects.tolist()) - set(eligible.tolist()))
        warnings.warn(
            f"subjects {skipped} have a single sequence and are excluded from training"
        )

    torch.manual_seed(config.seed)
    pair = build_generator_pair(sign_vector=sign, t=matcher.t)
    critic = PatchCritic()
    clip_weights(critic, config.clip_delta)

    matcher.eval()
    for p in matcher.parameters():
        p.requires_grad_(False)

    opt_g = torch.optim.Adam(
        list(pair.encoder.parameters()) + list(pair.decoder.parameters()),
        lr=config.lr, betas=(0.5, 0.999),
    )
    opt_d = torch.optim.Adam(critic.parameters(), lr=config.lr, betas=(0.5, 0.999))
    opt_dec = None
    if config.decoder_steps > 0:
        opt_dec = torch.optim.Adam(pair.decoder.parameters(), lr=config.lr,
                                   betas=(0.5, 0.999))

    rng = np.random.default_rng(config.seed)
    crops = to_tensor(np.asarray(dataset.crops))
    steps = config.steps_per_epoch or max(1, int(np.ceil(len(dataset) / config.batch_size)))
    sign_t = torch.from_numpy(sign.astype(np.float32))

    history: dict[str, list[float]] = {term: [] for term in HISTORY_TERMS}
    critic_step = 0
    gen_step = 0

    for epoch in range(config.epochs):
        sums = {term: 0.0 for term in HISTORY_TERMS}
        for _ in range(steps):
            for _ in range(config.critic_steps):
                batch = sample_batch(dataset, config.batch_size, rng)
                x = crops[batch.anchor]
                with torch.no_grad():
                    a = pair.encoder(torch.cat([x, _noise_like(x, rng)], dim=1))
                    r = pair.decoder(a)
                lc = loss_adv_critic(criticize(critic, x), criticize(critic, a),
                                     criticize(critic, r))
                if not torch.isfinite(lc):
                    raise DivergenceError("adv_critic", critic_step)
                opt_d.zero_grad()
                lc.backward()
                opt_d.step()
                clip_weights(critic, config.clip_delta)
                critic_step += 1
                sums["adv_critic"] += float(lc.detach())
                if on_critic_step:
                    on_critic_step(critic_step, max_abs_weight(critic))

            batch = sample_batch(dataset, config.batch_size, rng)
            x = crops[batch.anchor]
            xs = crops[batch.same_seq]
            xc = crops[batch.cross_seq]
            a = pair.encoder(torch.cat([x, _noise_like(x, rng)], dim=1))
            a_s = pair.encoder(torch.cat([xs, _noise_like(xs, rng)], dim=1))
            a_c = pair.encoder(torch.cat([xc, _noise_like(xc, rng)], dim=1))
            r = pair.decoder(a)

            terms = {
                "mse": loss_mse(x, r),
                "adv": loss_adv_generator(criticize(critic, a), criticize(critic, r)),
                "ano": loss_ano(sign_t, matcher(torch.cat([x, a], dim=1))),
                "con": loss_con(matcher(torch.cat([a, a_s], dim=1))),
                "div": loss_div(matcher(torch.cat([a, a_c], dim=1))),
                "dis": loss_dis(batch_histograms(x, config.hist_bins),
                                batch_histograms(a, config.hist_bins)),
            }
            try:
                total = loss_total(terms, config.weights)
            except DivergenceError as e:
                raise DivergenceError(e.term, gen_step) from None
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            gen_step += 1
            for name, value in terms.items():
                sums[name] += float(value.detach())
            sums["total"] += float(total.detach())

            # reconstruction refinement: the decoder chases the freshly
            # updated encoder with new noise draws, adversary untouched
            for _ in range(config.decoder_steps):
                with torch.no_grad():
                    a_fresh = pair.encoder(torch.cat([x, _noise_like(x, rng)], dim=1))
                r_fresh = pair.decoder(a_fresh)
                refine = loss_mse(x, r_fresh)
                if not torch.isfinite(refine):
                    raise DivergenceError("mse", gen_step)
                opt_dec.zero_grad()
                refine.backward()
                opt_dec.step()

        for term in HISTORY_TERMS:
            denom = steps * config.critic_steps if term == "adv_critic" else steps
            history[term].append(sums[term] / denom)
        if on_epoch:
            on_epoch(epoch, {term: history[term][-1] for term in HISTORY_TERMS}, pair)

    pair.encoder.eval()
    pair.decoder.eval()
    critic.eval()
    return Phase2Result(pair=pair, critic=critic, history=history)


def save_history(history: dict[str, list[float]], path):
    """Writes the per-epoch loss history as epoch,term,value rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "term", "value"])
        epochs = max((len(v) for v in history.values()), default=0)
        for epoch in range(epochs):
            for term, values in history.items():
                if epoch < len(values):
                    writer.writerow([epoch, term, repr(values[epoch])])


def load_history(path) -> dict[str, list[float]]:
    history: dict[str, list[float]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for epoch, term, value in reader:
            history.setdefault(term, []).append(float(value))
    return history
