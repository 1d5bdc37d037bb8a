import pytest
import torch

from portal.backbone import Backbone, ModelConfig, count_parameters, ordered_sum


def micro_config(layers=2, hidden=32, heads=2):
    return ModelConfig(layers=layers, hidden=hidden, heads=heads, dropout=0.0,
                       num_bins=4, text_dim=16)


def make_backbone(config, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return Backbone(config).to(dtype)


class TestPresets:
    def test_table(self):
        mini = ModelConfig.from_preset("mini")
        assert (mini.layers, mini.hidden, mini.heads) == (4, 256, 4)
        large = ModelConfig.from_preset("large")
        assert (large.layers, large.hidden, large.heads) == (24, 1024, 16)
        base = ModelConfig.from_preset("base")
        assert (base.layers, base.hidden) == (12, 768)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            ModelConfig.from_preset("giga")

    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            ModelConfig(layers=1, hidden=30, heads=4)


class TestOrderedSum:
    def test_permutation_invariant_bitwise(self):
        torch.manual_seed(1)
        x = torch.randn(11, dtype=torch.float64)
        total = ordered_sum(x, dim=0)
        for seed in range(5):
            g = torch.Generator().manual_seed(seed)
            perm = torch.randperm(11, generator=g)
            assert torch.equal(ordered_sum(x[perm], dim=0), total)


class TestForward:
    def test_shape_contract(self):
        config = micro_config()
        model = make_backbone(config)
        x = torch.randn(3, 5, config.hidden, dtype=torch.float64)
        mask = torch.ones(3, 5, dtype=torch.bool)
        out = model(x, mask)
        assert out.shape == x.shape

    def test_wrong_dim_rejected(self):
        config = micro_config()
        model = make_backbone(config)
        with pytest.raises(ValueError):
            model(torch.randn(1, 4, 8, dtype=torch.float64), torch.ones(1, 4, dtype=torch.bool))

    def test_zero_layers_is_identity(self):
        config = micro_config(layers=0)
        model = make_backbone(config)
        x = torch.randn(2, 3, config.hidden, dtype=torch.float64)
        assert torch.equal(model(x, torch.ones(2, 3, dtype=torch.bool)), x)
        assert sum(p.numel() for p in model.parameters()) == 0

    def test_permutation_equivariance_exact_double(self):
        config = micro_config()
        model = make_backbone(config).eval()
        torch.manual_seed(3)
        for trial in range(20):
            t = int(torch.randint(2, 9, (1,)))
            x = torch.randn(1, t, config.hidden, dtype=torch.float64)
            mask = torch.ones(1, t, dtype=torch.bool)
            perm = torch.randperm(t)
            with torch.no_grad():
                out = model(x, mask)
                out_p = model(x[:, perm], mask)
            assert torch.equal(out_p, out[:, perm])

    def test_permutation_equivariance_single_precision(self):
        config = micro_config()
        model = make_backbone(config, dtype=torch.float32).eval()
        x = torch.randn(1, 6, config.hidden)
        mask = torch.ones(1, 6, dtype=torch.bool)
        perm = torch.randperm(6)
        with torch.no_grad():
            diff = (model(x[:, perm], mask) - model(x, mask)[:, perm]).abs().max()
        assert float(diff) < 1e-5

    def test_padding_cannot_influence_real_tokens(self):
        config = micro_config()
        model = make_backbone(config).eval()
        x = torch.randn(1, 6, config.hidden, dtype=torch.float64)
        mask = torch.tensor([[True, True, True, True, False, False]])
        with torch.no_grad():
            base = model(x, mask)
            x2 = x.clone()
            x2[0, 4:] = torch.randn(2, config.hidden, dtype=torch.float64) * 100
            perturbed = model(x2, mask)
        assert torch.equal(perturbed[0, :4], base[0, :4])

    def test_dropout_only_in_train_mode(self):
        config = ModelConfig(layers=1, hidden=32, heads=2, dropout=0.5, num_bins=4, text_dim=16)
        model = make_backbone(config)
        x = torch.randn(1, 4, config.hidden, dtype=torch.float64)
        mask = torch.ones(1, 4, dtype=torch.bool)
        model.eval()
        with torch.no_grad():
            assert torch.equal(model(x, mask), model(x, mask))
        model.train()
        torch.manual_seed(0)
        a = model(x, mask)
        torch.manual_seed(1)
        b = model(x, mask)
        assert not torch.equal(a, b)


class TestCountParameters:
    def test_matches_actual_modules(self):
        for config in (micro_config(), micro_config(layers=0),
                       ModelConfig.from_preset("mini"), ModelConfig.from_preset("base")):
            model = Backbone(config)
            assert count_parameters(config) == sum(p.numel() for p in model.parameters())

    def test_hand_computed_base(self):
        # One layer: 4(d^2+d) attention, 4d norms, 8d^2+5d ffn; final norm 2d.
        d, n = 768, 12
        expected = n * (12 * d * d + 13 * d) + 2 * d
        assert count_parameters(ModelConfig.from_preset("base")) == expected

    def test_monotone_in_size(self):
        assert count_parameters(ModelConfig.from_preset("base")) > count_parameters(
            ModelConfig.from_preset("mini"))


class TestGradients:
    def test_backbone_gradcheck_sampled(self):
        """Analytic grads match central differences on a double-precision micro model."""
        config = micro_config()
        model = make_backbone(config).eval()
        torch.manual_seed(5)
        x = torch.randn(1, 3, config.hidden, dtype=torch.float64)
        mask = torch.ones(1, 3, dtype=torch.bool)
        target = torch.randn(1, 3, config.hidden, dtype=torch.float64)

        def loss_fn():
            return ((model(x, mask) - target) ** 2).mean()

        loss = loss_fn()
        loss.backward()
        h = 1e-6
        g = torch.Generator().manual_seed(9)
        worst = 0.0
        for _name, p in model.named_parameters():
            flat = p.detach().view(-1)
            idx = torch.randint(0, flat.numel(), (min(4, flat.numel()),), generator=g)
            for i in idx.tolist():
                orig = float(flat[i])
                with torch.no_grad():
                    flat[i] = orig + h
                    up = float(loss_fn())
                    flat[i] = orig - h
                    down = float(loss_fn())
                    flat[i] = orig
                fd = (up - down) / (2 * h)
                an = float(p.grad.view(-1)[i])
                # Hybrid relative error: the 1e-3 floor keeps finite-difference
                # roundoff (~1e-10 at h=1e-6) from dominating near-zero gradients.
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3))
        assert worst < 1e-5
