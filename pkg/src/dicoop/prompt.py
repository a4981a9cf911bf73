"""Learnable context vectors: layouts, trainable-row masks, prompt assembly.

A prompt is the (length+1)-row embedding sequence fed to the frozen text
encoder: ``length`` learnable context rows followed by one frozen class or
domain token row. Three layouts control which context rows each training
pass may update:

* ``SCP`` (shared context) - every row trainable in both passes.
* ``DFP`` (domain first)   - first half domain rows, second half class rows.
* ``CFP`` (class first)    - first half class rows, second half domain rows.

For the split layouts the halves are frozen crosswise: a class pass may only
touch class rows and a domain pass only domain rows. The split is hard-coded
at one half; the class or domain token always sits at the end of the prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, LayoutError
from .rng import stream

CONTEXT_INIT_STD = 0.02
TOKEN_EMBED_STD = 1.0


class Layout(str, Enum):
    SCP = "scp"
    DFP = "dfp"
    CFP = "cfp"


class PassKind(str, Enum):
    CLASS = "class"
    DOMAIN = "domain"


def _require_even_split(layout: Layout, length: int) -> None:
    if layout is not Layout.SCP and length % 2 != 0:
        raise LayoutError(
            f"layout {layout.value} splits the context in half and needs an "
            f"even token count, got {length}"
        )


def _frozen_matrix(values: np.ndarray, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != ndim:
        raise ArgumentError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PromptContext:
    """The trainable context matrix plus its layout tag.

    ``values`` has one row per context token; rows are immutable, training
    produces new instances.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        arr = _frozen_matrix(self.values, "context values")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ArgumentError(f"context must be non-empty, got shape {arr.shape}")
        _require_even_split(self.layout, arr.shape[0])
        object.__setattr__(self, "values", arr)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class TokenTable:
    """Frozen embeddings for the class and domain names.

    One row per name; rows are never updated by training.
    """

    class_embeddings: np.ndarray
    domain_embeddings: np.ndarray
    class_names: tuple[str, ...]
    domain_names: tuple[str, ...]

    def __post_init__(self) -> None:
        cls = _frozen_matrix(self.class_embeddings, "class embeddings")
        dom = _frozen_matrix(self.domain_embeddings, "domain embeddings")
        object.__setattr__(self, "class_embeddings", cls)
        object.__setattr__(self, "domain_embeddings", dom)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "domain_names", tuple(self.domain_names))
        if len(self.class_names) < 2 or len(self.domain_names) < 2:
            raise ArgumentError("need at least two class names and two domain names")
        if cls.shape[0] != len(self.class_names):
            raise ArgumentError("one class embedding row per class name required")
        if dom.shape[0] != len(self.domain_names):
            raise ArgumentError("one domain embedding row per domain name required")
        if cls.shape[1] != dom.shape[1]:
            raise ArgumentError("class and domain embeddings must share their width")
        for names, kind in ((self.class_names, "class"), (self.domain_names, "domain")):
            if len(set(names)) != len(names):
                raise ArgumentError(f"{kind} names must be unique")

    @property
    def width(self) -> int:
        return self.class_embeddings.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_domains(self) -> int:
        return len(self.domain_names)

    def embeddings_for(self, pass_kind: PassKind) -> np.ndarray:
        if pass_kind is PassKind.CLASS:
            return self.class_embeddings
        return self.domain_embeddings


def new_context(length: int, width: int, layout: Layout, seed: int) -> PromptContext:
    """Draw a fresh context with i.i.d. N(0, 0.02) entries.

    Deterministic given ``seed``; the draw has its own stream, so other
    consumers of the same seed are unaffected.
    """
    if length < 2:
        raise ArgumentError(f"context length must be at least 2, got {length}")
    if width < 1:
        raise ArgumentError(f"embedding width must be positive, got {width}")
    _require_even_split(layout, length)
    values = stream(seed, "context-init").normal(0.0, CONTEXT_INIT_STD, (length, width))
    return PromptContext(values=values, layout=layout)


def make_token_table(
    class_names: tuple[str, ...] | list[str],
    domain_names: tuple[str, ...] | list[str],
    width: int,
    seed: int,
) -> TokenTable:
    """Draw frozen token embeddings for the given names.

    Rows are i.i.d. Gaussian at unit entry scale. Names map one-to-one onto
    rows; there is no tokenizer.
    """
    if width < 1:
        raise ArgumentError(f"embedding width must be positive, got {width}")
    rng = stream(seed, "token-table")
    cls = rng.normal(0.0, TOKEN_EMBED_STD, (len(class_names), width))
    dom = rng.normal(0.0, TOKEN_EMBED_STD, (len(domain_names), width))
    return TokenTable(
        class_embeddings=cls,
        domain_embeddings=dom,
        class_names=tuple(class_names),
        domain_names=tuple(domain_names),
    )


def update_mask(layout: Layout, pass_kind: PassKind, length: int) -> np.ndarray:
    """Boolean mask over context rows; True rows are trainable this pass.

    SCP trains every row in both passes. DFP trains the first half in the
    domain pass and the second half in the class pass; CFP is the mirror
    image. For split layouts the two passes' masks are complementary.
    """
    if length < 1:
        raise ArgumentError(f"token count must be positive, got {length}")
    _require_even_split(layout, length)
    if layout is Layout.SCP:
        return np.ones(length, dtype=bool)
    half = length // 2
    mask = np.zeros(length, dtype=bool)
    first_half_kind = PassKind.DOMAIN if layout is Layout.DFP else PassKind.CLASS
    if pass_kind is first_half_kind:
        mask[:half] = True
    else:
        mask[half:] = True
    return mask


def assemble_prompt(context: PromptContext, token: np.ndarray) -> np.ndarray:
    """Concatenate the context rows with one frozen token row.

    Returns a fresh (length+1, width) array; neither the context nor the
    token table is mutated.
    """
    token = np.asarray(token, dtype=np.float64)
    if token.ndim != 1 or token.shape[0] != context.width:
        raise ArgumentError(
            f"token must be a vector of width {context.width}, got shape {token.shape}"
        )
    return np.concatenate([context.values, token[np.newaxis, :]], axis=0)
