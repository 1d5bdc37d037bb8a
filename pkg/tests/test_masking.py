import random

import pytest
import torch

from portal.backbone import ModelConfig
from portal.cells import Number, Row, Text
from portal.encoder import CellEncoder, build_row_batch, row_features
from portal.masking import (
    KEPT,
    REPLACED,
    UNMASKED,
    ZEROED,
    MaskPlan,
    apply_mask,
    make_mask_plan,
)
from portal.text_embed import FallbackEmbedder

CFG = ModelConfig(layers=1, hidden=32, heads=2, num_bins=4, text_dim=16, dropout=0.0)


def wide_row(n: int) -> Row:
    return Row([(f"c{i}", Number(float(i))) for i in range(n)])


def pools_for(row: Row, extra=True) -> dict:
    pools = {}
    for name, value in row.cells:
        pools[name] = [value, Number(value.value + 1.0)] if extra else [value]
    return pools


class TestMakeMaskPlan:
    def test_probability_zero_leaves_all_unmasked(self):
        row = wide_row(20)
        plan = make_mask_plan(row, pools_for(row), 0.0, random.Random(0))
        assert plan.actions == [UNMASKED] * 20
        assert plan.masked_indices == []

    def test_probability_one_with_singleton_pool_never_replaces(self):
        row = wide_row(200)
        plan = make_mask_plan(row, pools_for(row, extra=False), 1.0, random.Random(0))
        assert UNMASKED not in plan.actions
        assert REPLACED not in plan.actions
        assert set(plan.actions) <= {ZEROED, KEPT}

    def test_replacements_come_from_the_column_pool(self):
        row = wide_row(300)
        pools = pools_for(row)
        plan = make_mask_plan(row, pools, 1.0, random.Random(1))
        for i, action in enumerate(plan.actions):
            if action == REPLACED:
                assert plan.replacements[i] in pools[f"c{i}"]
        assert REPLACED in plan.actions

    def test_monte_carlo_rates(self):
        # 1e5 cells here; the full 1e6-cell bound is in the acceptance suite.
        row = wide_row(100)
        pools = pools_for(row)
        rng = random.Random(7)
        counts = {UNMASKED: 0, ZEROED: 0, KEPT: 0, REPLACED: 0}
        total = 0
        for _ in range(1000):
            plan = make_mask_plan(row, pools, 0.3, rng)
            for action in plan.actions:
                counts[action] += 1
                total += 1
        selected = total - counts[UNMASKED]
        assert selected / total == pytest.approx(0.30, abs=0.01)
        assert counts[ZEROED] / selected == pytest.approx(0.80, abs=0.02)
        assert counts[KEPT] / selected == pytest.approx(0.10, abs=0.02)
        assert counts[REPLACED] / selected == pytest.approx(0.10, abs=0.02)

    def test_deterministic_given_rng_state(self):
        row = wide_row(50)
        pools = pools_for(row)
        a = make_mask_plan(row, pools, 0.5, random.Random(3))
        b = make_mask_plan(row, pools, 0.5, random.Random(3))
        assert a.actions == b.actions and a.replacements == b.replacements


class TestApplyMask:
    def setup_method(self):
        torch.manual_seed(0)
        self.embedder = FallbackEmbedder(CFG.text_dim)
        self.encoder = CellEncoder(CFG)

    def _encode(self, feats):
        batch = build_row_batch([feats], CFG.num_bins, CFG.text_dim)
        with torch.no_grad():
            return self.encoder(batch)[0]

    def test_all_unmasked_is_identity(self):
        row = Row([("a", Number(2.0)), ("b", Text("hi"))])
        feats = row_features(row, self.embedder, CFG.num_bins)
        plan = MaskPlan(actions=[UNMASKED, UNMASKED], replacements=[None, None], mask_prob=0.0)
        masked = apply_mask(feats, plan, self.embedder, CFG.num_bins)
        assert torch.equal(self._encode(masked), self._encode(feats))

    def test_zeroed_token_equals_bare_name_term(self):
        row = Row([("price", Number(6.0))])
        feats = row_features(row, self.embedder, CFG.num_bins)
        plan = MaskPlan(actions=[ZEROED], replacements=[None], mask_prob=1.0)
        masked = apply_mask(feats, plan, self.embedder, CFG.num_bins)
        token = self._encode(masked)[0]
        name_vec = torch.from_numpy(self.embedder.embed_one("price")).to(torch.float32)
        with torch.no_grad():
            expected = self.encoder.name_adapter(name_vec)
        assert torch.allclose(token, expected, atol=1e-6)

    def test_replaced_token_equals_reencoding(self):
        row = Row([("price", Number(6.0))])
        feats = row_features(row, self.embedder, CFG.num_bins)
        plan = MaskPlan(actions=[REPLACED], replacements=[Number(-1.0)], mask_prob=1.0)
        masked = apply_mask(feats, plan, self.embedder, CFG.num_bins)
        direct = row_features(Row([("price", Number(-1.0))]), self.embedder, CFG.num_bins)
        assert torch.equal(self._encode(masked), self._encode(direct))

    def test_length_mismatch_rejected(self):
        row = Row([("a", Number(1.0))])
        feats = row_features(row, self.embedder, CFG.num_bins)
        plan = MaskPlan(actions=[UNMASKED, ZEROED], replacements=[None, None], mask_prob=0.5)
        with pytest.raises(ValueError):
            apply_mask(feats, plan, self.embedder, CFG.num_bins)

    def test_originals_untouched(self):
        row = Row([("a", Number(2.0))])
        feats = row_features(row, self.embedder, CFG.num_bins)
        plan = MaskPlan(actions=[ZEROED], replacements=[None], mask_prob=1.0)
        apply_mask(feats, plan, self.embedder, CFG.num_bins)
        assert feats[0].content_scale == 1.0
