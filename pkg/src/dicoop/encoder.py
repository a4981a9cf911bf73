"""Frozen toy text encoder with an exact vector-Jacobian product.

The encoder maps an (input_len, width) embedding sequence to a unit-norm
feature in three steps:

    pooled = sum_m w_m * seq_m          (positional weights w, fixed)
    z      = projection @ pooled + bias (frozen affine map)
    g      = z / ||z||                  (L2 normalization)

This is the smallest architecture that is position-sensitive (so the split
layouts can behave differently), has a short hand-derived backward pass, and
is cheap enough to verify exhaustively against finite differences. All
arithmetic is 64-bit; gradient checks at 1e-6 are not reliable below that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateFeatureError
from .rng import stream

BIAS_STD = 0.05
DEGENERATE_NORM = 1e-12
WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FrozenTextEncoder:
    """Immutable encoder parameters; safe to share across threads."""

    positional_weights: np.ndarray  # (input_len,), strictly positive, sums to 1
    projection: np.ndarray          # (feature_width, embed_width)
    bias: np.ndarray                # (feature_width,)

    def __post_init__(self) -> None:
        w = np.array(self.positional_weights, dtype=np.float64)
        p = np.array(self.projection, dtype=np.float64, order="C")
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 2:
            raise ArgumentError("positional weights must be a vector of length >= 2")
        if p.ndim != 2:
            raise ArgumentError("projection must be a matrix")
        if b.ndim != 1 or b.shape[0] != p.shape[0]:
            raise ArgumentError("bias width must match the projection's output width")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(p)) and np.all(np.isfinite(b))):
            raise ArgumentError("encoder parameters must be finite")
        if np.any(w <= 0.0):
            raise ArgumentError("positional weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ArgumentError("positional weights must sum to 1")
        for arr in (w, p, b):
            arr.setflags(write=False)
        object.__setattr__(self, "positional_weights", w)
        object.__setattr__(self, "projection", p)
        object.__setattr__(self, "bias", b)

    @property
    def input_len(self) -> int:
        return self.positional_weights.shape[0]

    @property
    def embed_width(self) -> int:
        return self.projection.shape[1]

    @property
    def feature_width(self) -> int:
        return self.projection.shape[0]


def make_frozen_encoder(
    input_len: int, embed_width: int, feature_width: int, seed: int
) -> FrozenTextEncoder:
    """Build a seeded, deterministic encoder.

    Positional weights come from uniform(0.5, 1.5) draws normalized to sum 1.
    When embed and feature widths match, the projection is a random
    orthogonal matrix, so any feature direction is reachable from some
    pooled input; otherwise it is Gaussian scaled by 1/sqrt(embed_width).
    """
    if input_len < 2:
        raise ArgumentError(f"input length must be at least 2, got {input_len}")
    if embed_width < 1 or feature_width < 1:
        raise ArgumentError("widths must be positive")
    w = stream(seed, "encoder-positional").uniform(0.5, 1.5, input_len)
    w = w / w.sum()
    proj_rng = stream(seed, "encoder-projection")
    if embed_width == feature_width:
        gauss = proj_rng.normal(size=(feature_width, embed_width))
        q, r = np.linalg.qr(gauss)
        signs = np.sign(np.diag(r))
        signs[signs == 0.0] = 1.0
        projection = q * signs  # column sign fix makes the factorization unique
    else:
        projection = proj_rng.normal(size=(feature_width, embed_width)) / np.sqrt(embed_width)
    bias = stream(seed, "encoder-bias").normal(0.0, BIAS_STD, feature_width)
    return FrozenTextEncoder(positional_weights=w, projection=projection, bias=bias)


def _check_sequence(enc: FrozenTextEncoder, seq: np.ndarray) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape != (enc.input_len, enc.embed_width):
        raise ArgumentError(
            f"sequence must have shape ({enc.input_len}, {enc.embed_width}), "
            f"got {seq.shape}"
        )
    return seq


def _forward(enc: FrozenTextEncoder, seq: np.ndarray) -> tuple[np.ndarray, float]:
    pooled = enc.positional_weights @ seq
    z = enc.projection @ pooled + enc.bias
    norm = float(np.linalg.norm(z))
    if norm < DEGENERATE_NORM:
        raise DegenerateFeatureError(
            f"pre-normalization output norm {norm:.3e} is below {DEGENERATE_NORM:.0e}; "
            "the context has collapsed the encoder input"
        )
    return z, norm

def encode(enc: FrozenTextEncoder, seq: np.ndarray) -> np.ndarray:
    """Encode a sequence to a unit-norm feature vector."""
    seq = _check_sequence(enc, seq)
    z, norm = _forward(enc, seq)
    return z / norm


def encode_vjp(enc: FrozenTextEncoder, seq: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``upstream . encode(seq)`` with respect to every sequence entry.

    Derivation: with g = z/||z||, d(u.g)/dz = (u - (u.g) g)/||z||; pulling that
    through the affine map and the positional pooling gives

        grad[m, :] = w_m * projection^T @ (u - (u.g) g) / ||z||

    Rows of frozen tokens are returned too; callers mask what they own.
    """
    seq = _check_sequence(enc, seq)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (enc.feature_width,):
        raise ArgumentError(
            f"upstream must be a vector of width {enc.feature_width}, got {upstream.shape}"
        )
    z, norm = _forward(enc, seq)
    g = z / norm
    through_norm = (upstream - (upstream @ g) * g) / norm
    back = enc.projection.T @ through_norm
    return np.outer(enc.positional_weights, back)
