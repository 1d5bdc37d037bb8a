"""Per-type decoding heads and the weighted multi-task reconstruction loss.

Numbers decode into sign (3 classes), exponent (255 classes) and a single
fraction logit trained with binary cross-entropy against the
parity-continuous fraction target. Dates decode into day/month/year classes
only. Text decodes into the raw text-embedding space under a Huber loss.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import ModelConfig, init_weights
from .dates import NUM_DAY_CLASSES, NUM_MONTH_CLASSES, NUM_YEAR_CLASSES
from .numeric import NUM_EXPONENT_CLASSES, NUM_SIGN_CLASSES

HUBER_DELTA = 1.0

NUMBER_HEAD_DIM = NUM_SIGN_CLASSES + NUM_EXPONENT_CLASSES + 1  # 259
DATE_HEAD_DIM = NUM_DAY_CLASSES + NUM_MONTH_CLASSES + NUM_YEAR_CLASSES  # 144


@dataclass(frozen=True)
class LossWeights:
    day: float
    month: float
    year: float
    sign: float
    fraction: float
    exponent: float
    text: float

    @classmethod
    def cascading_uniform(cls) -> "LossWeights":
        # Text takes one third; the six discrete losses share the rest equally.
        return cls(day=1 / 9, month=1 / 9, year=1 / 9, sign=1 / 9,
                   fraction=1 / 9, exponent=1 / 9, text=1 / 3)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossBundle:
    """The seven per-type components (0 where no masked token of that type)."""

    day: torch.Tensor
    month: torch.Tensor
    year: torch.Tensor
    sign: torch.Tensor
    fraction: torch.Tensor
    exponent: torch.Tensor
    text: torch.Tensor
    counts: dict[str, int]

    def components(self) -> dict[str, torch.Tensor]:
        return {"day": self.day, "month": self.month, "year": self.year,
                "sign": self.sign, "fraction": self.fraction,
                "exponent": self.exponent, "text": self.text}


def total_loss(bundle: LossBundle, weights: LossWeights) -> torch.Tensor:
    parts = bundle.components()
    return sum(weights.as_dict()[name] * parts[name] for name in parts)


class PretrainHeads(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.number = nn.Linear(config.hidden, NUMBER_HEAD_DIM)
        self.date = nn.Linear(config.hidden, DATE_HEAD_DIM)
        self.text = nn.Linear(config.hidden, config.text_dim)
        self.apply(init_weights)


def split_number_outputs(out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    sign = out[..., :NUM_SIGN_CLASSES]
    exponent = out[..., NUM_SIGN_CLASSES:NUM_SIGN_CLASSES + NUM_EXPONENT_CLASSES]
    fraction = out[..., -1]
    return sign, exponent, fraction


def split_date_outputs(out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    day = out[..., :NUM_DAY_CLASSES]
    month = out[..., NUM_DAY_CLASSES:NUM_DAY_CLASSES + NUM_MONTH_CLASSES]
    year = out[..., NUM_DAY_CLASSES + NUM_MONTH_CLASSES:]
    return day, month, year


def number_loss(outputs: torch.Tensor, sign_class: torch.Tensor, exponent_class: torch.Tensor,
                tilde: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Sign and exponent cross-entropies plus fraction BCE against tilde in [0, 1]."""
    sign_logits, exp_logits, frac_logit = split_number_outputs(outputs)
    l_sign = F.cross_entropy(sign_logits, sign_class)
    l_exp = F.cross_entropy(exp_logits, exponent_class)
    l_frac = F.binary_cross_entropy_with_logits(frac_logit, tilde)
    return l_sign, l_exp, l_frac


def date_loss(outputs: torch.Tensor, day_class: torch.Tensor, month_class: torch.Tensor,
              year_class: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    day_logits, month_logits, year_logits = split_date_outputs(outputs)
    return (F.cross_entropy(day_logits, day_class),
            F.cross_entropy(month_logits, month_class),
            F.cross_entropy(year_logits, year_class))


def text_loss(predicted: torch.Tensor, target: torch.Tensor, delta: float = HUBER_DELTA) -> torch.Tensor:
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    return F.huber_loss(predicted, target, delta=delta)


@dataclass
class MaskedTargets:
    """Flattened positions (row-major over [B, T]) and targets per cell type."""

    number_pos: torch.Tensor    # [n_num] long
    number_sign: torch.Tensor
    number_exponent: torch.Tensor
    number_tilde: torch.Tensor
    date_pos: torch.Tensor      # [n_date] long
    date_day: torch.Tensor
    date_month: torch.Tensor
    date_year: torch.Tensor
    text_pos: torch.Tensor      # [n_text] long
    text_target: torch.Tensor   # [n_text, E]


def masked_losses(heads: PretrainHeads, hidden: torch.Tensor, targets: MaskedTargets,
                  delta: float = HUBER_DELTA) -> LossBundle:
    """Head losses over masked cells only, averaged per type; absent types give 0."""
    d = hidden.shape[-1]
    flat = hidden.reshape(-1, d)
    dtype = flat.dtype
    zero = torch.zeros((), dtype=dtype)
    l_day = l_month = l_year = zero
    l_sign = l_exp = l_frac = zero
    l_text = zero

    n_num = int(targets.number_pos.numel())
    if n_num:
        out = heads.number(flat[targets.number_pos])
        l_sign, l_exp, l_frac = number_loss(out, targets.number_sign, targets.number_exponent,
                                            targets.number_tilde.to(dtype))
    n_date = int(targets.date_pos.numel())
    if n_date:
        out = heads.date(flat[targets.date_pos])
        l_day, l_month, l_year = date_loss(out, targets.date_day, targets.date_month, targets.date_year)
    n_text = int(targets.text_pos.numel())
    if n_text:
        out = heads.text(flat[targets.text_pos])
        l_text = text_loss(out, targets.text_target.to(dtype), delta)

    return LossBundle(day=l_day, month=l_month, year=l_year, sign=l_sign,
                      fraction=l_frac, exponent=l_exp, text=l_text,
                      counts={"number": n_num, "date": n_date, "text": n_text})
