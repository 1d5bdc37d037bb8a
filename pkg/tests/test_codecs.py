import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from portal.codecs import (
    CODEC_NAMES,
    NUM_FRACTION_BINS,
    CodecError,
    CodecFailureError,
    codec_from_state,
    encode_regression_target,
    make_codec,
)

targets_strategy = st.lists(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).filter(lambda x: abs(x) > 1e-6 or x == 0.0),
    min_size=8, max_size=40, unique=True,
)


class TestRegistry:
    def test_all_ten_names(self):
        assert len(CODEC_NAMES) == 10
        for name in CODEC_NAMES:
            assert make_codec(name).name == name

    def test_unknown_name_lists_valid_ones(self):
        with pytest.raises(CodecError) as err:
            make_codec("fourier")
        assert "scalar_L2" in str(err.value)


class TestScalarCodec:
    def test_standardization_example(self):
        codec = make_codec("scalar_L2").fit(np.array([0.0, 2.0]))
        enc = codec.encode_batch(np.array([2.0]))
        assert float(enc["z"][0]) == pytest.approx(1.0)  # mu=1, sigma=1

    def test_single_value_helper(self):
        codec = make_codec("scalar_L2").fit(np.array([0.0, 2.0]))
        assert encode_regression_target(2.0, codec) == {"z": pytest.approx(1.0)}
        triplet = make_codec("triplet_tilde_XE").fit(np.array([1.0, -6.0]))
        enc = encode_regression_target(-6.0, triplet)
        assert enc == {"sign": 0.0, "frac": 0.5, "exponent": 129.0}

    def test_decode_inverts_encode(self):
        codec = make_codec("scalar_L2").fit(np.array([0.0, 2.0]))
        out = torch.tensor([[1.0]])
        assert codec.decode(out)[0] == pytest.approx(2.0)

    def test_constant_targets_rejected(self):
        with pytest.raises(CodecError):
            make_codec("scalar_L2").fit(np.full(5, 3.3))

    def test_raw_passthrough(self):
        codec = make_codec("raw_L2").fit(np.array([5.0, -1.0]))
        assert codec.roundtrip(np.array([123.456]))[0] == 123.456


class TestTripletCodec:
    def test_minus_six_example(self):
        codec = make_codec("triplet_tilde_XE").fit(np.array([1.0, -6.0]))
        sign, frac, exp = codec.encode_values(np.array([-6.0]))
        assert sign[0] == 0.0          # negative -> sign bit 0
        assert frac[0] == 0.5          # alpha=1.5, beta=2 even -> tilde 0.5
        assert exp[0] == 129           # beta + 127

    def test_zero_target_maps_to_positive_sign(self):
        codec = make_codec("triplet_tilde_XE").fit(np.array([0.0, 1.0]))
        sign, _, _ = codec.encode_values(np.array([0.0]))
        assert sign[0] == 1.0

    def test_alpha_variant_differs_on_odd_beta(self):
        tilde = make_codec("triplet_tilde_XE").fit(np.array([1.0, 2.0]))
        alpha = make_codec("triplet_alpha_XE").fit(np.array([1.0, 2.0]))
        # y = 3 = 1.5 * 2^1: tilde = 2 - 1.5 = 0.5, alpha - 1 = 0.5 -> equal here
        # y = 2.5 = 1.25 * 2^1: tilde = 0.75, alpha - 1 = 0.25
        _, t_frac, _ = tilde.encode_values(np.array([2.5]))
        _, a_frac, _ = alpha.encode_values(np.array([2.5]))
        assert t_frac[0] == pytest.approx(0.75)
        assert a_frac[0] == pytest.approx(0.25)

    def test_head_dims(self):
        assert make_codec("triplet_tilde_XE").head_dim == 257
        assert make_codec("triplet_tilde_binned_XE").head_dim == 1 + NUM_FRACTION_BINS + 255


class TestPercentileCodec:
    def test_median_lands_on_bin_fifty(self):
        y = np.arange(1000, dtype=np.float64)
        codec = make_codec("percentile_XE").fit(y)
        enc = codec.encode_batch(np.array([np.quantile(y, 0.5)]))
        assert int(enc["bin"][0]) == 50

    def test_extremes(self):
        y = np.arange(1000, dtype=np.float64)
        codec = make_codec("percentile_XE").fit(y)
        assert int(codec.encode_batch(np.array([-1e9]))["bin"][0]) == 0
        assert int(codec.encode_batch(np.array([1e9]))["bin"][0]) == 99

    def test_roundtrip_stays_within_half_a_bin_in_rank_space(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=5000)
        codec = make_codec("percentile_XE").fit(y)
        sample = rng.choice(y, 200, replace=False)
        decoded = codec.roundtrip(sample)
        ranks_in = np.searchsorted(np.sort(y), sample) / len(y)
        ranks_out = np.searchsorted(np.sort(y), decoded) / len(y)
        assert np.max(np.abs(ranks_in - ranks_out)) <= 0.5 / 100 + 1e-3


class TestRoundTrips:
    NON_BINNED = ("scalar_L2", "raw_L2", "triplet_tilde_XE", "triplet_alpha_XE",
                  "triplet_tilde_L2", "triplet_tilde_standard_XE")

    @given(targets_strategy)
    @settings(max_examples=40, deadline=None)
    def test_non_binned_codecs_invert(self, values):
        y = np.asarray(values, dtype=np.float64)
        for name in self.NON_BINNED:
            try:
                codec = make_codec(name).fit(y)
            except CodecError:
                continue  # constant targets
            back = codec.roundtrip(y)
            assert np.all(np.abs(back - y) <= 1e-5 * np.maximum(1.0, np.abs(y))), name

    @given(targets_strategy)
    @settings(max_examples=20, deadline=None)
    def test_binned_tilde_errs_at_most_half_a_bin(self, values):
        y = np.asarray(values, dtype=np.float64)
        codec = make_codec("triplet_tilde_binned_XE").fit(y)
        back = codec.roundtrip(y)
        # half a fraction bin converts to alpha error 1/64, relative value error <= 1/64
        rel = np.abs(back - y) / np.maximum(np.abs(y), 1e-300)
        nonzero = y != 0
        assert np.all(rel[nonzero] <= 0.5 / NUM_FRACTION_BINS + 1e-9)

    def test_power_codecs_invert_on_benign_targets(self):
        rng = np.random.default_rng(1)
        y = np.abs(rng.normal(size=50)) * 10 + 1
        for name in ("power_L2", "power_tilde_XE"):
            codec = make_codec(name).fit(y)
            back = codec.roundtrip(y)
            assert np.all(np.abs(back - y) <= 1e-4 * np.maximum(1.0, np.abs(y))), name


class TestPowerFailures:
    def test_degenerate_targets_raise_codec_failure(self):
        # both tails enormous: no lambda keeps the transform finite
        y = np.array([-1e300, 1e300, 1.0, 2.0, 3.0])
        for name in ("power_L2", "power_tilde_XE"):
            with pytest.raises(CodecFailureError):
                codec = make_codec(name)
                codec.fit(y)
                codec.encode_batch(y)

    def test_failure_error_is_not_a_codec_error(self):
        assert not issubclass(CodecFailureError, CodecError)


class TestLossShapes:
    def test_each_codec_produces_finite_loss(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=16) * 4 + 2
        torch.manual_seed(0)
        for name in CODEC_NAMES:
            codec = make_codec(name).fit(y)
            enc = codec.encode_batch(y)
            out = torch.randn(16, codec.head_dim, dtype=torch.float64, requires_grad=True)
            loss = codec.loss(out, enc)
            assert torch.isfinite(loss), name
            loss.backward()
            assert torch.all(torch.isfinite(out.grad)), name
            decoded = codec.decode(out.detach())
            assert decoded.shape == (16,), name

    def test_state_roundtrip(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=30) * 7
        for name in CODEC_NAMES:
            codec = make_codec(name).fit(y)
            clone = codec_from_state(codec.state_dict())
            out = torch.randn(8, codec.head_dim, dtype=torch.float64)
            assert np.allclose(codec.decode(out), clone.decode(out), equal_nan=True), name
