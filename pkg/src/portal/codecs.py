"""Regression target codecs: how a real-valued target becomes a head target.

Ten interchangeable strategies: direct scalar regression (raw, standardized,
or power-transformed), percentile classification, and sign/fraction/exponent
triplet heads with the fraction expressed as alpha-1, the parity-continuous
tilde, a binned tilde, or tilde under an L2 loss, optionally after
standardizing or power-transforming the target. Normalization statistics are
always fitted on training targets only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.stats
import torch
import torch.nn.functional as F

from .numeric import (
    BETA_MIN,
    NUM_EXPONENT_CLASSES,
    decompose_number,
    invert_number,
    tilde_alpha,
)

NUM_PERCENTILE_BINS = 100
NUM_FRACTION_BINS = 32


class CodecError(ValueError):
    """Unusable configuration or targets (e.g. constant targets for scaling)."""


class CodecFailureError(RuntimeError):
    """A power transform produced infinity or NaN (a counted failure mode)."""


# ---------------------------------------------------------------------------
# target normalizers


@dataclass
class _Identity:
    kind: str = "none"

    def fit(self, y: np.ndarray):
        return self

    def transform(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64)

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z

    def state(self) -> dict:
        return {"kind": self.kind}


@dataclass
class _Standardizer(_Identity):
    kind: str = "standard"
    mean: float = 0.0
    std: float = 1.0

    def fit(self, y: np.ndarray):
        self.mean = float(np.mean(y))
        self.std = float(np.std(y))
        if self.std == 0.0:
            raise CodecError("constant targets: standard deviation is zero")
        return self

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def state(self) -> dict:
        return {"kind": self.kind, "mean": self.mean, "std": self.std}


def _yeo_johnson(y: np.ndarray, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    pos = y >= 0
    with np.errstate(all="ignore"):
        if abs(lam) > 1e-12:
            out[pos] = (np.power(y[pos] + 1.0, lam) - 1.0) / lam
        else:
            out[pos] = np.log1p(y[pos])
        if abs(lam - 2.0) > 1e-12:
            out[~pos] = -(np.power(1.0 - y[~pos], 2.0 - lam) - 1.0) / (2.0 - lam)
        else:
            out[~pos] = -np.log1p(-y[~pos])
    return out


def _yeo_johnson_inverse(z: np.ndarray, lam: float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    with np.errstate(all="ignore"):
        if abs(lam) > 1e-12:
            out[pos] = np.power(z[pos] * lam + 1.0, 1.0 / lam) - 1.0
        else:
            out[pos] = np.expm1(z[pos])
        if abs(lam - 2.0) > 1e-12:
            out[~pos] = 1.0 - np.power(1.0 - z[~pos] * (2.0 - lam), 1.0 / (2.0 - lam))
        else:
            out[~pos] = -np.expm1(-z[~pos])
    return out


@dataclass
class _PowerTransform(_Identity):
    """Yeo-Johnson with MLE lambda, then standardization of the transformed targets."""

    kind: str = "power"
    lam: float = 1.0
    mean: float = 0.0
    scale: float = 1.0

    def fit(self, y: np.ndarray):
        y = np.asarray(y, dtype=np.float64)
        try:
            with np.errstate(all="ignore"):
                transformed, lam = scipy.stats.yeojohnson(y)
        except Exception as exc:
            raise CodecFailureError(f"power transform fit failed: {exc}") from exc
        if not np.all(np.isfinite(transformed)):
            raise CodecFailureError("power transform produced non-finite values on training targets")
        self.lam = float(lam)
        self.mean = float(np.mean(transformed))
        self.scale = float(np.std(transformed))
        if self.scale == 0.0 or not math.isfinite(self.mean) or not math.isfinite(self.scale):
            raise CodecFailureError("power transform yielded degenerate statistics")
        return self

    def transform(self, y: np.ndarray) -> np.ndarray:
        z = (_yeo_johnson(y, self.lam) - self.mean) / self.scale
        if not np.all(np.isfinite(z)):
            raise CodecFailureError("power transform produced non-finite values")
        return z

    def inverse(self, z: np.ndarray) -> np.ndarray:
        y = _yeo_johnson_inverse(z * self.scale + self.mean, self.lam)
        if not np.all(np.isfinite(y)):
            raise CodecFailureError("inverse power transform produced non-finite values")
        return y

    def state(self) -> dict:
        return {"kind": self.kind, "lam": self.lam, "mean": self.mean, "scale": self.scale}


def _normalizer(kind: str) -> _Identity:
    return {"none": _Identity, "standard": _Standardizer, "power": _PowerTransform}[kind]()


def _normalizer_from_state(d: dict) -> _Identity:
    norm = _normalizer(d["kind"])
    for key, value in d.items():
        if key != "kind":
            setattr(norm, key, value)
    return norm


# ---------------------------------------------------------------------------
# codecs


class RegressionCodec:
    """Fit on train targets, encode targets for the head, decode head outputs."""

    name: str = "base"
    head_dim: int = 1

    def fit(self, targets: np.ndarray) -> "RegressionCodec":
        raise NotImplementedError

    def encode_batch(self, targets: np.ndarray) -> dict[str, torch.Tensor]:
        raise NotImplementedError

    def loss(self, head_out: torch.Tensor, encoded: dict[str, torch.Tensor]) -> torch.Tensor:
        raise NotImplementedError

    def decode(self, head_out: torch.Tensor) -> np.ndarray:
        raise NotImplementedError

    def roundtrip(self, targets: np.ndarray) -> np.ndarray:
        """Decode of a perfect encoding; identity up to codec resolution."""
        raise NotImplementedError

    def state_dict(self) -> dict:
        raise NotImplementedError


class ScalarCodec(RegressionCodec):
    """Single-node L2 regression on the (possibly normalized) target."""

    head_dim = 1

    def __init__(self, normalize: str):
        self.name = {"standard": "scalar_L2", "none": "raw_L2", "power": "power_L2"}[normalize]
        self.norm = _normalizer(normalize)

    def fit(self, targets: np.ndarray):
        self.norm.fit(np.asarray(targets, dtype=np.float64))
        return self

    def encode_batch(self, targets):
        z = self.norm.transform(targets)
        return {"z": torch.from_numpy(np.asarray(z))}

    def loss(self, head_out, encoded):
        return F.mse_loss(head_out[:, 0], encoded["z"].to(head_out.dtype))

    def decode(self, head_out):
        z = head_out[:, 0].detach().double().numpy()
        return np.asarray(self.norm.inverse(z), dtype=np.float64)

    def roundtrip(self, targets):
        return np.asarray(self.norm.inverse(self.norm.transform(targets)), dtype=np.float64)

    def state_dict(self):
        return {"name": self.name, "normalizer": self.norm.state()}


class PercentileCodec(RegressionCodec):
    """Cross-entropy over equal-frequency train-target bins; decodes bin medians."""

    name = "percentile_XE"
    head_dim = NUM_PERCENTILE_BINS

    def __init__(self):
        self.edges: np.ndarray | None = None
        self.representatives: np.ndarray | None = None

    def fit(self, targets: np.ndarray):
        y = np.asarray(targets, dtype=np.float64)
        qs = np.arange(1, NUM_PERCENTILE_BINS) / NUM_PERCENTILE_BINS
        self.edges = np.quantile(y, qs)
        mids = (np.arange(NUM_PERCENTILE_BINS) + 0.5) / NUM_PERCENTILE_BINS
        self.representatives = np.quantile(y, mids)
        return self

    def encode_batch(self, targets):
        idx = np.searchsorted(self.edges, np.asarray(targets, dtype=np.float64), side="right")
        return {"bin": torch.from_numpy(idx.astype(np.int64))}

    def loss(self, head_out, encoded):
        return F.cross_entropy(head_out, encoded["bin"])

    def decode(self, head_out):
        idx = head_out.detach().argmax(dim=-1).numpy()
        return self.representatives[idx]

    def roundtrip(self, targets):
        idx = np.searchsorted(self.edges, np.asarray(targets, dtype=np.float64), side="right")
        return self.representatives[idx]

    def state_dict(self):
        return {"name": self.name, "edges": self.edges.tolist(),
                "representatives": self.representatives.tolist()}


class TripletCodec(RegressionCodec):
    """Sign bit + fraction + exponent-class head on the (normalized) target.

    fraction mode: "tilde" (parity-continuous), "alpha" (alpha - 1, not
    continuous across binades), or "tilde_binned" (tilde over 32 bins with
    cross-entropy). frac_loss "bce" trains the continuous fraction by binary
    cross-entropy, "l2" by mean squared error on the sigmoid output.
    """

    def __init__(self, name: str, fraction: str = "tilde", frac_loss: str = "bce",
                 normalize: str = "none"):
        self.name = name
        self.fraction = fraction
        self.frac_loss = frac_loss
        self.norm = _normalizer(normalize)
        self.head_dim = 1 + (NUM_FRACTION_BINS if fraction == "tilde_binned" else 1) + NUM_EXPONENT_CLASSES

    def fit(self, targets: np.ndarray):
        self.norm.fit(np.asarray(targets, dtype=np.float64))
        return self

    def _split(self, head_out: torch.Tensor):
        sign = head_out[:, 0]
        frac = head_out[:, 1:-NUM_EXPONENT_CLASSES]
        exponent = head_out[:, -NUM_EXPONENT_CLASSES:]
        return sign, frac, exponent

    def encode_values(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-value (sign bit, fraction target, exponent class).

        The sign-bit head cannot express zero, so zero targets take a positive
        sign and the smallest-magnitude slot (beta = -127, alpha = 1), which
        decodes to ~5.9e-39, well inside codec resolution of zero.
        """
        sign_bits, fracs, exp_cls = [], [], []
        for y in np.asarray(values, dtype=np.float64):
            t = decompose_number(float(y))
            beta = BETA_MIN if t.sign == 0 else t.beta
            sign_bits.append(0.0 if t.sign < 0 else 1.0)
            frac = tilde_alpha(t.alpha, beta) if self.fraction != "alpha" else t.alpha - 1.0
            fracs.append(frac)
            exp_cls.append(beta - BETA_MIN)
        return np.array(sign_bits), np.array(fracs), np.array(exp_cls, dtype=np.int64)

    def encode_batch(self, targets):
        z = self.norm.transform(targets)
        sign_bits, fracs, exp_cls = self.encode_values(z)
        enc = {
            "sign": torch.from_numpy(sign_bits),
            "exponent": torch.from_numpy(exp_cls),
        }
        if self.fraction == "tilde_binned":
            bins = np.minimum((fracs * NUM_FRACTION_BINS).astype(np.int64), NUM_FRACTION_BINS - 1)
            enc["frac_bin"] = torch.from_numpy(bins)
        else:
            enc["frac"] = torch.from_numpy(fracs)
        return enc

    def loss(self, head_out, encoded):
        sign, frac, exponent = self._split(head_out)
        l_sign = F.binary_cross_entropy_with_logits(sign, encoded["sign"].to(sign.dtype))
        l_exp = F.cross_entropy(exponent, encoded["exponent"])
        if self.fraction == "tilde_binned":
            l_frac = F.cross_entropy(frac, encoded["frac_bin"])
        elif self.frac_loss == "l2":
            l_frac = F.mse_loss(torch.sigmoid(frac[:, 0]), encoded["frac"].to(sign.dtype))
        else:
            l_frac = F.binary_cross_entropy_with_logits(frac[:, 0], encoded["frac"].to(sign.dtype))
        return l_sign + l_frac + l_exp

    def _decode_parts(self, sign_prob, frac_value, beta):
        if self.fraction == "alpha":
            alpha = 1.0 + frac_value
            sign = 1.0 if sign_prob >= 0.5 else -1.0
            return sign * math.ldexp(alpha, beta)
        return invert_number(sign_prob, frac_value, beta)

    def decode(self, head_out):
        sign, frac, exponent = self._split(head_out.detach().double())
        beta = (exponent.argmax(dim=-1) + BETA_MIN).numpy()
        sign_prob = torch.sigmoid(sign).numpy()
        if self.fraction == "tilde_binned":
            frac_value = ((frac.argmax(dim=-1).numpy() + 0.5) / NUM_FRACTION_BINS)
        else:
            frac_value = torch.sigmoid(frac[:, 0]).numpy()
        z = np.array([
            self._decode_parts(float(s), float(f), int(b))
            for s, f, b in zip(sign_prob, frac_value, beta)
        ])
        return np.asarray(self.norm.inverse(z), dtype=np.float64)

    def roundtrip(self, targets):
        z = self.norm.transform(targets)
        sign_bits, fracs, exp_cls = self.encode_values(z)
        if self.fraction == "tilde_binned":
            bins = np.minimum((fracs * NUM_FRACTION_BINS).astype(np.int64), NUM_FRACTION_BINS - 1)
            fracs = (bins + 0.5) / NUM_FRACTION_BINS
        decoded = np.array([
            self._decode_parts(float(s), float(f), int(c) + BETA_MIN)
            for s, f, c in zip(sign_bits, fracs, exp_cls)
        ])
        return np.asarray(self.norm.inverse(decoded), dtype=np.float64)

    def state_dict(self):
        return {"name": self.name, "normalizer": self.norm.state()}


_CODEC_FACTORIES = {
    "scalar_L2": lambda: ScalarCodec("standard"),
    "raw_L2": lambda: ScalarCodec("none"),
    "power_L2": lambda: ScalarCodec("power"),
    "percentile_XE": lambda: PercentileCodec(),
    "triplet_tilde_XE": lambda: TripletCodec("triplet_tilde_XE"),
    "triplet_alpha_XE": lambda: TripletCodec("triplet_alpha_XE", fraction="alpha"),
    "triplet_tilde_binned_XE": lambda: TripletCodec("triplet_tilde_binned_XE", fraction="tilde_binned"),
    "triplet_tilde_L2": lambda: TripletCodec("triplet_tilde_L2", frac_loss="l2"),
    "triplet_tilde_standard_XE": lambda: TripletCodec("triplet_tilde_standard_XE", normalize="standard"),
    "power_tilde_XE": lambda: TripletCodec("power_tilde_XE", normalize="power"),
}

CODEC_NAMES = tuple(_CODEC_FACTORIES)


def make_codec(name: str) -> RegressionCodec:
    if name not in _CODEC_FACTORIES:
        raise CodecError(f"unknown codec {name!r}; valid codecs: {', '.join(CODEC_NAMES)}")
    return _CODEC_FACTORIES[name]()


def encode_regression_target(y: float, codec: RegressionCodec) -> dict[str, float]:
    """Head target of one value under a fitted codec, as plain floats."""
    enc = codec.encode_batch(np.array([y], dtype=np.float64))
    return {key: float(value[0]) for key, value in enc.items()}


def codec_from_state(state: dict) -> RegressionCodec:
    codec = make_codec(state["name"])
    if isinstance(codec, PercentileCodec):
        codec.edges = np.asarray(state["edges"], dtype=np.float64)
        codec.representatives = np.asarray(state["representatives"], dtype=np.float64)
    else:
        codec.norm = _normalizer_from_state(state["normalizer"])
    return codec
