"""Adversarial soft-prompt tuning with gradient reversal, at desk scale.

Learnable context vectors are trained against a frozen toy text encoder and
precomputed image features. A class pass tunes the context for
classification; a domain pass, routed through a gradient reversal rule,
pushes the same context toward domain invariance. Three prompt layouts (one
shared, two split-and-frozen) and a leave-one-domain-out harness complete
the lab.
"""

from .data import (
    FeatureRecord,
    FeatureStore,
    SynthConfig,
    leave_one_domain_out,
    read_features,
    sample_few_shot,
    synth_generate,
    write_features,
)
from .encoder import FrozenTextEncoder, encode, encode_vjp, make_frozen_encoder
from .errors import DicoopError
from .objective import (
    ObjectiveConfig,
    PassResult,
    class_probs,
    clamp_warning_count,
    combined_loss,
    grl_backward,
    nll_and_grad,
    pass_loss_and_grad,
    predict,
)
from .prompt import (
    Layout,
    PassKind,
    PromptContext,
    TokenTable,
    assemble_prompt,
    make_token_table,
    new_context,
    update_mask,
)
from .trainer import Schedule, TrainConfig, TrainedRun, lambda_at, train, train_step

__version__ = "0.1.0"

__all__ = [
    "DicoopError",
    "FeatureRecord",
    "FeatureStore",
    "FrozenTextEncoder",
    "Layout",
    "ObjectiveConfig",
    "PassKind",
    "PassResult",
    "PromptContext",
    "Schedule",
    "SynthConfig",
    "TokenTable",
    "TrainConfig",
    "TrainedRun",
    "__version__",
    "assemble_prompt",
    "class_probs",
    "clamp_warning_count",
    "combined_loss",
    "encode",
    "encode_vjp",
    "grl_backward",
    "lambda_at",
    "leave_one_domain_out",
    "make_frozen_encoder",
    "make_token_table",
    "new_context",
    "nll_and_grad",
    "pass_loss_and_grad",
    "predict",
    "read_features",
    "sample_few_shot",
    "synth_generate",
    "train",
    "train_step",
    "update_mask",
    "write_features",
]
