"""Training objectives for the de-identification pair.

Every function is a pure map from tensors to a scalar tensor and keeps the
input dtype, so the analytic gradients can be checked against finite
differences in double precision. Expectations are batch means throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import ContractError, DivergenceError, Histogram, soft_histogram_t

TERM_NAMES = ("mse", "adv", "ano", "con", "div", "dis")


@dataclass
class LossWeights:
    """Coefficients of the combined generator objective."""

    mse: float = 50.0
    adv: float = 1.0
    ano: float = 1.0
    con: float = 1.0
    div: float = 1.0
    dis: float = 1.0

    def __post_init__(self):
        for name in TERM_NAMES:
            if getattr(self, name) < 0:
                raise ContractError(f"loss weight {name} must be non-negative")

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in TERM_NAMES}


def _t(x) -> torch.Tensor:
    if isinstance(x, Histogram):
        x = x.bins
    t = torch.as_tensor(x)
    if t.numel() == 0:
        raise ContractError("loss input must not be empty")
    return t


def loss_mse(x, r) -> torch.Tensor:
    """Mean squared reconstruction error over all pixels and channels."""
    x, r = _t(x), _t(r)
    if x.shape != r.shape:
        raise ContractError(f"shape mismatch {tuple(x.shape)} vs {tuple(r.shape)}")
    return ((x - r) ** 2).mean()


def loss_adv_critic(score_x, score_a, score_r) -> torch.Tensor:
    """Critic objective: drive real scores up, generated scores down."""
    return -2.0 * _t(score_x).mean() + _t(score_a).mean() + _t(score_r).mean()


def loss_adv_generator(score_a, score_r) -> torch.Tensor:
    """Generator-side adversarial term: make both outputs score as real."""
    return -_t(score_a).mean() - _t(score_r).mean()


def loss_ano(sign_vector, d, printed_form: bool = False) -> torch.Tensor:
    """Attribute steering over matcher agreements d in [0, 1]^t.

    Minimizing pushes agreement toward 1 where the sign is +1 and toward 0
    where it is -1. `printed_form` flips the overall sign, which steers every
    attribute the wrong way; it exists only to document the alternative.
    """
    d = _t(d)
    s = torch.as_tensor(sign_vector, dtype=d.dtype)
    per_item = (s * (2.0 * d - 1.0)).sum(dim=-1)
    inner = per_item.mean()
    return inner if printed_form else -inner


def loss_con(d) -> torch.Tensor:
    """Temporal consistency: reward agreement on same-sequence pairs."""
    d = _t(d)
    return -d.sum(dim=-1).mean()


def loss_div(d) -> torch.Tensor:
    """Cross-sequence diversity: penalize agreement on cross-sequence pairs."""
    d = _t(d)
    return d.sum(dim=-1).mean()


def loss_dis(hist_x, hist_a) -> torch.Tensor:
    """Chi-square distance between intensity histograms, empty bins ignored."""
    hx, ha = _t(hist_x), _t(hist_a)
    if hx.shape != ha.shape:
        raise ContractError(f"histogram shape mismatch {tuple(hx.shape)} vs {tuple(ha.shape)}")
    num = (hx - ha) ** 2
    den = hx + ha
    mask = den > 0
    # keep the masked-out branch out of the backward graph, or 0/0 poisons it
    safe = torch.where(mask, den, torch.ones_like(den))
    chi = torch.where(mask, num / safe, torch.zeros_like(num))
    return chi.sum(dim=-1).mean()


def batch_histograms(images: torch.Tensor, bin_count: int) -> torch.Tensor:
    """Soft per-channel histograms of a (B, C, H, W) batch, flattened per item."""
    b, c = images.shape[0], images.shape[1]
    dens = soft_histogram_t(images.reshape(b, c, -1), bin_count)
    return dens.reshape(b, c * bin_count)


def loss_total(terms: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the six generator terms.

    Raises DivergenceError naming the first non-finite term, so a diverging
    run is reported by cause instead of crashing downstream.
    """
    total = None
    for name in TERM_NAMES:
        if name not in terms:
            raise ContractError(f"missing loss term '{name}'")
        value = terms[name]
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise DivergenceError(name)
        piece = getattr(weights, name) * value
        total = piece if total is None else total + piece
    return torch.as_tensor(total)
