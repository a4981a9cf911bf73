"""Two-pass adversarial training of the context vectors.

Each step runs a class pass and a domain pass over the batch, averages each
pass's context gradient, and applies a single SGD update

    delta = -lr * (class_mask * g_class + domain_mask * grl_backward(g_domain, lam))

so for the shared layout the step equals plain SGD on
``class_nll - lam * domain_nll``. Rows outside a pass's mask are bit-copied,
never rewritten, which is what keeps the frozen halves of the split layouts
exactly frozen. At inference time domain labels do not exist, so evaluation
runs the class pass only (see the harness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .data import FeatureRecord, FeatureStore, leave_one_domain_out
from .encoder import FrozenTextEncoder, make_frozen_encoder
from .errors import ArgumentError, SetupError
from .objective import batch_pass_loss_and_grad, combined_loss, grl_backward
from .prompt import (
    Layout,
    PassKind,
    PromptContext,
    TokenTable,
    make_token_table,
    new_context,
    update_mask,
)
from .rng import stream


class Schedule(str, Enum):
    CONSTANT = "constant"
    DANN_RAMP = "dann-ramp"


def lambda_at(schedule: Schedule, lambda_max: float, progress: float) -> float:
    """Adversarial strength at a training progress point in [0, 1].

    The ramp follows the classic adversarial warm-up curve
    ``lambda_max * (2 / (1 + e^(-10 p)) - 1)``.
    """
    if not (0.0 <= progress <= 1.0):
        raise ArgumentError(f"progress must be in [0, 1], got {progress}")
    if schedule is Schedule.CONSTANT:
        return lambda_max
    return lambda_max * (2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0)


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of one training run."""

    layout: Layout
    holdout_domain: str
    context_length: int = 16
    embed_width: int = 64
    feature_width: int = 64
    tau: float = 0.07
    lambda_max: float = 1.0
    schedule: Schedule = Schedule.CONSTANT
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0.0:
            raise ArgumentError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch size must be at least 1")
        if self.lambda_max < 0.0:
            raise ArgumentError("lambda_max must be >= 0")
        if not (self.tau > 0.0):
            raise ArgumentError("temperature must be positive")
        if self.context_length < 2:
            raise ArgumentError("context length must be at least 2")
        if self.layout is not Layout.SCP and self.context_length % 2 != 0:
            raise ArgumentError(
                f"layout {self.layout.value} needs an even context length"
            )
        if self.embed_width < 1 or self.feature_width < 1:
            raise ArgumentError("widths must be positive")


@dataclass(frozen=True)
class EpochStats:
    class_loss: float
    domain_loss: float
    combined: float
    lam: float


@dataclass(frozen=True, eq=False)
class StepResult:
    """Losses of one step, plus the per-pass update contributions when asked.

    Contributions are the masked, lr-scaled deltas each pass added; rows a
    pass does not own are exactly zero there.
    """

    class_loss: float
    domain_loss: float
    class_contribution: np.ndarray | None = None
    domain_contribution: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class TrainedRun:
    """A finished run: final context, config echo, and per-epoch history."""

    final_context: PromptContext
    config: TrainConfig
    history: tuple[EpochStats, ...]
    encoder_seed: int | None
    token_seed: int | None

    def __post_init__(self) -> None:
        if len(self.history) != self.config.epochs:
            raise ArgumentError("history must hold one entry per epoch")
        for entry in self.history:
            values = (entry.class_loss, entry.domain_loss, entry.combined, entry.lam)
            if not all(math.isfinite(v) for v in values):
                raise ArgumentError("history entries must be finite")


def train_step(
    context: PromptContext,
    batch: Sequence[FeatureRecord],
    token_table: TokenTable,
    enc: FrozenTextEncoder,
    tau: float,
    lam: float,
    lr: float,
    collect_contributions: bool = False,
) -> tuple[PromptContext, StepResult]:
    """One joint SGD step from one batch.

    Both pass gradients are batch means. With lam = 0 the domain pass still
    reports its loss but contributes nothing, and the update is bit-identical
    to a class-only step.
    """
    if len(batch) == 0:
        raise ArgumentError("batch must be non-empty")
    features = np.stack([r.feature for r in batch])
    class_labels = np.array([r.class_id for r in batch])
    domain_labels = np.array([r.domain_id for r in batch])

    class_loss, class_grad = batch_pass_loss_and_grad(
        context, token_table, enc, features, class_labels, PassKind.CLASS, tau
    )
    need_domain_grad = lam != 0.0
    domain_loss, domain_grad = batch_pass_loss_and_grad(
        context, token_table, enc, features, domain_labels, PassKind.DOMAIN, tau,
        need_grad=need_domain_grad,
    )

    class_rows = update_mask(context.layout, PassKind.CLASS, context.length)
    domain_rows = update_mask(context.layout, PassKind.DOMAIN, context.length)
    new_values = context.values.copy()
    new_values[class_rows] += -lr * class_grad[class_rows]
    if need_domain_grad:
        reversed_grad = grl_backward(domain_grad, lam)
        new_values[domain_rows] += -lr * reversed_grad[domain_rows]

    class_contribution = domain_contribution = None
    if collect_contributions:
        class_contribution = np.zeros_like(context.values)
        class_contribution[class_rows] = -lr * class_grad[class_rows]
        domain_contribution = np.zeros_like(context.values)
        if need_domain_grad:
            domain_contribution[domain_rows] = -lr * grl_backward(domain_grad, lam)[domain_rows]

    result = StepResult(
        class_loss=class_loss,
        domain_loss=domain_loss,
        class_contribution=class_contribution,
        domain_contribution=domain_contribution,
    )
    return PromptContext(values=new_values, layout=context.layout), result


def _validate_sources(store: FeatureStore, holdout: str) -> FeatureStore:
    sources, _ = leave_one_domain_out(store, holdout)
    present = sources.domains_present()
    if len(present) < 2:
        raise SetupError(
            f"training needs at least two source domains after holding out "
            f"{holdout!r}, found {len(present)}"
        )
    covered = {(r.class_id, r.domain_id) for r in sources.records}
    for domain_id in present:
        for class_id in range(len(store.class_names)):
            if (class_id, domain_id) not in covered:
                raise SetupError(
                    f"source domain {store.domain_names[domain_id]!r} has no "
                    f"records for class {store.class_names[class_id]!r}"
                )
    return sources


def train(
    config: TrainConfig,
    store: FeatureStore,
    enc: FrozenTextEncoder | None = None,
    token_table: TokenTable | None = None,
    step_hook: Callable[[int, StepResult], None] | None = None,
) -> TrainedRun:
    """Run the full two-pass training loop over the source domains.

    Records of the holdout domain are dropped if present. The encoder and
    token table default to seeded builds from ``config.seed``; their streams
    are keyed by purpose, so initialization, shuffling, and any data noise
    never interleave. Deterministic: equal configs give bit-identical runs.
    ``step_hook`` receives (step_index, StepResult) with update contributions
    attached; it exists for instrumentation and costs nothing when unset.
    """
    if store.dim != config.feature_width:
        raise SetupError(
            f"store feature width {store.dim} does not match config "
            f"feature width {config.feature_width}"
        )
    sources = _validate_sources(store, config.holdout_domain)
    encoder_seed = token_seed = None
    if enc is None:
        encoder_seed = config.seed
        enc = make_frozen_encoder(
            config.context_length + 1, config.embed_width, config.feature_width,
            seed=config.seed,
        )
    if token_table is None:
        token_seed = config.seed
        token_table = make_token_table(
            store.class_names, store.domain_names, config.embed_width, seed=config.seed
        )
    if enc.input_len != config.context_length + 1:
        raise SetupError("encoder input length must be context length + 1")
    if enc.embed_width != config.embed_width or token_table.width != config.embed_width:
        raise SetupError("embedding widths of encoder, table, and config must agree")

    context = new_context(config.context_length, config.embed_width, config.layout, config.seed)
    n = len(sources.records)
    history: list[EpochStats] = []
    step_index = 0
    for epoch in range(config.epochs):
        lam = lambda_at(config.schedule, config.lambda_max, epoch / config.epochs)
        order = stream(config.seed, "epoch-shuffle", epoch).permutation(n)
        class_loss_sum = 0.0
        domain_loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = [sources.records[i] for i in order[start : start + config.batch_size]]
            context, step = train_step(
                context, batch, token_table, enc, config.tau, lam, config.lr,
                collect_contributions=step_hook is not None,
            )
            if step_hook is not None:
                step_hook(step_index, step)
            step_index += 1
            class_loss_sum += step.class_loss * len(batch)
            domain_loss_sum += step.domain_loss * len(batch)
        mean_class = class_loss_sum / n
        mean_domain = domain_loss_sum / n
        history.append(
            EpochStats(
                class_loss=mean_class,
                domain_loss=mean_domain,
                combined=combined_loss(mean_class, mean_domain, lam),
                lam=lam,
            )
        )
    return TrainedRun(
        final_context=context,
        config=config,
        history=tuple(history),
        encoder_seed=encoder_seed,
        token_seed=token_seed,
    )
