"""Binary scientific decomposition of numbers and the soft-binned fraction.

A finite value is written x = sign * alpha * 2**beta with alpha in [1, 2) and
beta an integer clamped to [-127, 127], mirroring single-precision exponent
range. Zero gets its own sign category since +/-alpha*2**beta cannot reach it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BETA_MIN = -127
BETA_MAX = 127
NUM_EXPONENT_CLASSES = BETA_MAX - BETA_MIN + 1  # 255, indexed beta + 127

# Saturation fraction for exponent overflow: keeps reconstruction monotone
# at the clip boundary without touching 2.0.
ALPHA_SATURATED = 1.9999999

SIGN_NEGATIVE = 0
SIGN_ZERO = 1
SIGN_POSITIVE = 2
NUM_SIGN_CLASSES = 3


@dataclass(frozen=True)
class NumericTriplet:
    sign: int  # +1, -1, or 0 (zero)
    alpha: float  # in [1, 2)
    beta: int  # in [-127, 127]

    @property
    def sign_class(self) -> int:
        return {-1: SIGN_NEGATIVE, 0: SIGN_ZERO, 1: SIGN_POSITIVE}[self.sign]

    @property
    def exponent_class(self) -> int:
        return self.beta - BETA_MIN


def decompose_number(x: float) -> NumericTriplet:
    """Exact binary scientific decomposition of a finite float.

    Underflow clamps to (beta=-127, alpha=1.0), the smallest magnitude;
    overflow saturates to (beta=127, alpha=ALPHA_SATURATED). Inside the
    clip band the decomposition is exact: reconstruct() returns x bit-for-bit.
    """
    if not math.isfinite(x):
        raise ValueError(f"decompose_number requires a finite value, got {x!r}")
    if x == 0.0:
        return NumericTriplet(sign=0, alpha=1.0, beta=0)
    sign = 1 if x > 0 else -1
    mantissa, exp = math.frexp(abs(x))  # abs(x) == mantissa * 2**exp, mantissa in [0.5, 1)
    alpha, beta = mantissa * 2.0, exp - 1
    if beta < BETA_MIN:
        return NumericTriplet(sign=sign, alpha=1.0, beta=BETA_MIN)
    if beta > BETA_MAX:
        return NumericTriplet(sign=sign, alpha=ALPHA_SATURATED, beta=BETA_MAX)
    return NumericTriplet(sign=sign, alpha=alpha, beta=beta)


def reconstruct_number(t: NumericTriplet) -> float:
    if t.sign == 0:
        return 0.0
    return t.sign * math.ldexp(t.alpha, t.beta)


def soft_bin(alpha: float, num_bins: int) -> np.ndarray:
    """Triangular-kernel weights of alpha over num_bins uniform bins of [1, 2).

    Bin centers sit at 1 + (k + 0.5) / K. Weights are the linear interpolation
    between the two nearest centers; values outside the center range clamp to
    the nearest edge bin. Result: nonnegative, sums to 1, at most 2 nonzero.
    """
    if num_bins < 2:
        raise ValueError(f"need at least 2 bins, got {num_bins}")
    if not 1.0 <= alpha < 2.0:
        raise ValueError(f"alpha must lie in [1, 2), got {alpha}")
    weights = np.zeros(num_bins)
    first_center = 1.0 + 0.5 / num_bins
    last_center = 1.0 + (num_bins - 0.5) / num_bins
    if alpha <= first_center:
        weights[0] = 1.0
        return weights
    if alpha >= last_center:
        weights[-1] = 1.0
        return weights
    j = int(math.floor((alpha - 1.0) * num_bins - 0.5))
    j = min(max(j, 0), num_bins - 2)
    c_j = 1.0 + (j + 0.5) / num_bins
    t = (alpha - c_j) * num_bins
    t = min(max(t, 0.0), 1.0)
    weights[j] = 1.0 - t
    weights[j + 1] = t
    return weights


def tilde_alpha(alpha: float, beta: int) -> float:
    """Parity-continuous fraction target: alpha-1 for even beta, 2-alpha for odd.

    Equivalent to (-1)**beta * (alpha - 1.5) + 0.5; continuous in x across
    power-of-two boundaries, unlike alpha - 1 which jumps by ~1 there.
    """
    if beta % 2 == 0:
        return alpha - 1.0
    return 2.0 - alpha


def invert_number(sign_prob: float, tilde: float, beta: int) -> float:
    """Inverse of the parity-continuous encoding with a sigmoid sign bit."""
    if not BETA_MIN <= beta <= BETA_MAX:
        raise ValueError(f"beta out of range: {beta}")
    if beta % 2 == 0:
        alpha = 1.0 + tilde
    else:
        alpha = 2.0 - tilde
    sign = 1.0 if sign_prob >= 0.5 else -1.0
    return sign * math.ldexp(alpha, beta)


def decode_triplet_prediction(sign_class: int, tilde: float, beta: int) -> float:
    """Decode a 3-class-sign prediction; the zero class yields exactly 0."""
    if sign_class == SIGN_ZERO:
        return 0.0
    sign_prob = 1.0 if sign_class == SIGN_POSITIVE else 0.0
    return invert_number(sign_prob, tilde, beta)
