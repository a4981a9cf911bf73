"""Probability model, prediction rule, losses, and gradient-reversal semantics.

Classification is softmax over cosine similarities: text and image features
are unit vectors, so their dot product is the cosine; it is divided by a
temperature before the softmax. Training combines a class negative
log-likelihood with an adversarial domain term,

    total = class_nll - lambda * domain_nll,

optimized through two passes per example. The gradient reversal layer is the
identity in the forward direction, so it has no forward operation here at
all; its entire contract is the backward scaling by -lambda, applied exactly
where the domain-pass gradient folds into an update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .encoder import FrozenTextEncoder, encode, encode_vjp
from .errors import ArgumentError, DegenerateFeatureError, NormalizationContractError
from .prompt import PassKind, PromptContext, TokenTable, assemble_prompt

log = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-9
PROB_SUM_TOL = 1e-9
LOG_PROB_FLOOR = 1e-300


class _ClampCounter:
    """Counts probability clamps so collapsed prompts stay visible.

    Reads and bumps are GIL-atomic; this is a diagnostic, not a lock.
    """

    def __init__(self) -> None:
        self.count = 0

    def bump(self, value: float) -> None:
        self.count += 1
        log.warning("label probability %.3e clamped to %.0e", value, LOG_PROB_FLOOR)


clamp_warnings = _ClampCounter()


def clamp_warning_count() -> int:
    """How many times a label probability was clamped since import."""
    return clamp_warnings.count


@dataclass(frozen=True)
class ObjectiveConfig:
    """Softmax temperature and adversarial strength."""

    tau: float = 0.07
    lam: float = 1.0

    def __post_init__(self) -> None:
        if not (self.tau > 0.0):
            raise ArgumentError(f"temperature must be positive, got {self.tau}")
        if self.lam < 0.0:
            raise ArgumentError(f"adversarial strength must be >= 0, got {self.lam}")


@dataclass(frozen=True, eq=False)
class PassResult:
    """Loss of one forward pass and its gradient on the context rows.

    The gradient is raw: not yet masked by the layout and not yet reversed.
    """

    loss: float
    grad_context: np.ndarray

    def __post_init__(self) -> None:
        if not np.isfinite(self.loss):
            raise ArgumentError("pass loss must be finite")
        if not np.all(np.isfinite(self.grad_context)):
            raise ArgumentError("context gradient must be finite")


def probs_from_similarities(similarities: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax with max-subtraction for overflow safety."""
    if not (tau > 0.0):
        raise ArgumentError(f"temperature must be positive, got {tau}")
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ArgumentError("similarities must be a non-empty vector")
    logits = s / tau
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def class_probs(text_feats: np.ndarray, image_feat: np.ndarray, tau: float) -> np.ndarray:
    """Probability of each class (or domain) for one image feature.

    Inputs must already be unit-norm; the dot products below are then the
    cosines the probability model is defined over.
    """
    text_feats = np.asarray(text_feats, dtype=np.float64)
    image_feat = np.asarray(image_feat, dtype=np.float64)
    if text_feats.ndim != 2 or image_feat.ndim != 1:
        raise ArgumentError("expected a feature matrix and a feature vector")
    if text_feats.shape[1] != image_feat.shape[0]:
        raise ArgumentError("text and image feature widths differ")
    row_norms = np.linalg.norm(text_feats, axis=1)
    if np.any(np.abs(row_norms - 1.0) > UNIT_NORM_TOL):
        raise NormalizationContractError("text features must be unit-norm")
    if abs(float(np.linalg.norm(image_feat)) - 1.0) > UNIT_NORM_TOL:
        raise NormalizationContractError("image feature must be unit-norm")
    return probs_from_similarities(text_feats @ image_feat, tau)


def predict(probs: np.ndarray) -> int:
    """Index of the most probable class; ties break to the lowest index."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ArgumentError("probabilities must be a non-empty vector")
    if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise ArgumentError("probabilities must sum to 1")
    return int(np.argmax(p))


def nll_and_grad(probs: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the label and its gradient over the logits.

    Uses the softmax cross-entropy identity: d(nll)/d(logit) = probs - onehot.
    A label probability below 1e-300 is clamped and counted, never silently.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ArgumentError("probabilities must be a non-empty vector")
    if not (0 <= label < p.size):
        raise ArgumentError(f"label {label} outside [0, {p.size})")
    if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise ArgumentError("probabilities must be non-negative and sum to 1")
    p_label = float(p[label])
    if p_label < LOG_PROB_FLOOR:
        clamp_warnings.bump(p_label)
        p_label = LOG_PROB_FLOOR
    loss = -float(np.log(p_label))
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def grl_backward(grad: np.ndarray, lam: float) -> np.ndarray:
    """Backward rule of the gradient reversal layer: scale by -lambda.

    The forward direction is the identity, so no forward operation exists.
    """
    return -lam * np.asarray(grad, dtype=np.float64)


def combined_loss(class_loss: float, domain_loss: float, lam: float) -> float:
    """Monitoring value ``class_loss - lam * domain_loss``.

    Optimization uses the per-pass gradients with the reversal rule, which is
    the equivalent procedure; this scalar is only reported.
    """
    return class_loss - lam * domain_loss


def _token_features(
    context_values: np.ndarray, enc: FrozenTextEncoder, tokens: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Encode one prompt per token row, sharing the pooled context.

    Returns (features, z_norms); the norms feed the backward pass.
    Equivalent to encode() row by row, vectorized.
    """
    w = enc.positional_weights
    pooled_context = w[:-1] @ context_values
    pooled = pooled_context[np.newaxis, :] + w[-1] * tokens
    z = pooled @ enc.projection.T + enc.bias[np.newaxis, :]
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateFeatureError(
            "pre-normalization output collapsed for at least one prompt"
        )
    return z / norms[:, np.newaxis], norms


def _context_grad_from_upstreams(
    enc: FrozenTextEncoder,
    feats: np.ndarray,
    norms: np.ndarray,
    upstreams: np.ndarray,
    context_len: int,
) -> np.ndarray:
    """Chain per-prompt feature upstreams back onto the shared context rows.

    Linearity lets the per-prompt normalization corrections be summed before
    the single projection transpose.
    """
    inner = np.einsum("id,id->i", upstreams, feats)
    through_norm = (upstreams - inner[:, np.newaxis] * feats) / norms[:, np.newaxis]
    back = enc.projection.T @ through_norm.sum(axis=0)
    return np.outer(enc.positional_weights[:context_len], back)


def pass_loss_and_grad(
    context: PromptContext,
    token_table: TokenTable,
    enc: FrozenTextEncoder,
    image_feat: np.ndarray,
    label: int,
    pass_kind: PassKind,
    tau: float,
) -> PassResult:
    """One forward pass for a single record, with the raw context gradient.

    A class pass builds one prompt per class name and scores the image
    against all of them; a domain pass does the same over domain names. The
    returned gradient is before masking and before any reversal.
    """
    tokens = token_table.embeddings_for(pass_kind)
    if token_table.width != context.width:
        raise ArgumentError("token table width differs from context width")
    image_feat = np.asarray(image_feat, dtype=np.float64)
    feats = np.stack(
        [encode(enc, assemble_prompt(context, tokens[i])) for i in range(tokens.shape[0])]
    )
    probs = class_probs(feats, image_feat, tau)
    loss, grad_logits = nll_and_grad(probs, label)
    grad_similarities = grad_logits / tau
    grad_context = np.zeros_like(context.values)
    for i in range(tokens.shape[0]):
        upstream = grad_similarities[i] * image_feat
        full = encode_vjp(enc, assemble_prompt(context, tokens[i]), upstream)
        grad_context += full[: context.length]
    return PassResult(loss=loss, grad_context=grad_context)


def batch_pass_loss_and_grad(
    context: PromptContext,
    token_table: TokenTable,
    enc: FrozenTextEncoder,
    features: np.ndarray,
    labels: np.ndarray,
    pass_kind: PassKind,
    tau: float,
    need_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Batch-mean pass loss and context gradient.

    Matches the mean of per-record pass_loss_and_grad results up to float
    rounding; prompts are encoded once per token instead of once per record.
    """
    if not (tau > 0.0):
        raise ArgumentError(f"temperature must be positive, got {tau}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ArgumentError("features must be a non-empty matrix")
    if labels.shape != (features.shape[0],):
        raise ArgumentError("one label per feature row required")
    tokens = token_table.embeddings_for(pass_kind)
    if int(labels.min()) < 0 or int(labels.max()) >= tokens.shape[0]:
        raise ArgumentError("label outside the token-table range")
    n = features.shape[0]
    feats, norms = _token_features(context.values, enc, tokens)
    logits = (features @ feats.T) / tau
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    label_p = probs[np.arange(n), labels]
    clamped = label_p < LOG_PROB_FLOOR
    for value in label_p[clamped]:
        clamp_warnings.bump(float(value))
    losses = -np.log(np.maximum(label_p, LOG_PROB_FLOOR))
    mean_loss = float(losses.mean())
    if not need_grad:
        return mean_loss, None
    grad_logits = probs.copy()
    grad_logits[np.arange(n), labels] -= 1.0
    grad_logits /= n * tau
    upstreams = grad_logits.T @ features  # one aggregated upstream per prompt
    grad_context = _context_grad_from_upstreams(enc, feats, norms, upstreams, context.length)
    return mean_loss, grad_context
