"""Masked-cell pre-training policy.

Each non-missing cell is independently selected with probability p (default
0.30). A selected cell is zeroed with 80% probability, kept as-is with 10%,
or replaced with 10% by a value sampled from the same column of the same
table. Column names are never masked; they prompt the model for completion.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass

from .cells import CellValue, Row
from .encoder import CellFeatures, cell_features
from .text_embed import TextEmbedder

UNMASKED = "unmasked"
ZEROED = "zeroed"
KEPT = "kept"
REPLACED = "replaced"

DEFAULT_MASK_PROB = 0.30
ZERO_SHARE = 0.80
KEEP_SHARE = 0.10


@dataclass
class MaskPlan:
    """Per-cell decisions aligned with a row's non-missing cells."""

    actions: list[str]
    replacements: list[CellValue | None]
    mask_prob: float

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def masked_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.actions) if a != UNMASKED]


def make_mask_plan(
    row: Row,
    column_pools: dict[str, list[CellValue]],
    mask_prob: float,
    rng: random.Random,
) -> MaskPlan:
    """Draw masking decisions for one row.

    A column pool with fewer than 2 distinct values cannot produce an
    informative replacement, so `replaced` downgrades to `zeroed` there.
    """
    actions: list[str] = []
    replacements: list[CellValue | None] = []
    for name, _value in row.non_missing():
        if rng.random() >= mask_prob:
            actions.append(UNMASKED)
            replacements.append(None)
            continue
        u = rng.random()
        if u < ZERO_SHARE:
            actions.append(ZEROED)
            replacements.append(None)
        elif u < ZERO_SHARE + KEEP_SHARE:
            actions.append(KEPT)
            replacements.append(None)
        else:
            pool = column_pools.get(name, [])
            if len(set(pool)) < 2:
                actions.append(ZEROED)
                replacements.append(None)
            else:
                actions.append(REPLACED)
                replacements.append(pool[rng.randrange(len(pool))])
    return MaskPlan(actions=actions, replacements=replacements, mask_prob=mask_prob)


def apply_mask(
    features: list[CellFeatures],
    plan: MaskPlan,
    embedder: TextEmbedder,
    num_bins: int,
) -> list[CellFeatures]:
    """Transform a row's cell features according to a mask plan.

    Zeroed cells lose their content component but keep the column-name term;
    kept cells pass through; replaced cells are re-encoded from the
    replacement value under the same column name.
    """
    if len(features) != len(plan):
        raise ValueError(f"plan length {len(plan)} != row length {len(features)}")
    out: list[CellFeatures] = []
    for feats, action, replacement in zip(features, plan.actions, plan.replacements):
        if action == ZEROED:
            out.append(feats.zeroed())
        elif action == REPLACED:
            out.append(cell_features(replacement, feats.column, embedder, num_bins))
        else:
            out.append(dataclasses.replace(feats))
    return out
