"""Cross-form mimicking: attention over source forms, gated complementary
representations, and the combined training objective.

For one sample, targets and sources are row-aligned matrices whose row i
belongs to form i (canonical order: joint, bone, hybrid).  Each target form
owns one mimic head per representation channel (pooled feature vector, and
squashed class-activation map).  The head turns the target's row into a query
over all source rows, scales the resulting attention by the per-source quality
factor beta, gates the referenced mixture by how far it sits from the target,
and asks the target to move toward the gated result.

Gradient routing during training: the target representation entering the
attention and the gate is a detached copy, so the mimic loss reaches the
target backbone only through its direct difference term, and reaches the three
projections only through the constructed complementary representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tz
from .errors import ConfigError, DimensionError, ValidationError
from .skeleton import FORMS, Form
from .tensor import Tensor


class Channel(str, Enum):
    FEATURE = "feature"
    CATMAP = "catmap"


class Role(str, Enum):
    TARGET = "target"
    SOURCE = "source"


@dataclass
class RepresentationSet:
    """Row-aligned per-form representations for one sample."""

    matrix: Tensor  # (form_count, rep_dim)
    channel: Channel
    role: Role

    def __post_init__(self):
        if self.matrix.data.ndim != 2:
            raise DimensionError(f"representation matrix must be 2-D, got {self.matrix.shape}")

    @property
    def form_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def rep_dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class MimicHead:
    """Projections and quality prior for one (target form, channel) pair."""

    query_proj: Tensor  # (rep_dim, rep_dim)
    key_proj: Tensor
    value_proj: Tensor
    beta: np.ndarray  # (1, form_count) per-source quality factors
    beta_enabled: bool = True
    beta_seeded: bool = False  # set once the first accuracy measurement lands

    def __post_init__(self):
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 2 or self.beta.shape[0] != 1:
            raise DimensionError(f"beta must be a 1-row matrix, got {self.beta.shape}")
        _check_beta_range(self.beta)
        d = self.query_proj.shape
        if d[0] != d[1]:
            raise DimensionError(f"projections must be square, got {d}")
        for p in (self.key_proj, self.value_proj):
            if p.shape != d:
                raise DimensionError("projection shapes differ")

    @property
    def rep_dim(self) -> int:
        return self.query_proj.shape[0]

    @property
    def form_count(self) -> int:
        return self.beta.shape[1]

    def effective_beta(self) -> np.ndarray:
        """All-ones when disabled; the stored factors otherwise."""
        if not self.beta_enabled:
            return np.ones_like(self.beta)
        return self.beta

    def trainables(self) -> dict[str, Tensor]:
        return {"query": self.query_proj, "key": self.key_proj, "value": self.value_proj}


def _check_beta_range(beta: np.ndarray) -> None:
    if np.any(beta < 0.0) or np.any(beta > 1.0):
        raise ValidationError(f"beta entries must lie in [0, 1], got {beta.reshape(-1)}")


def init_mimic_head(rep_dim: int, form_count: int, seed: int, beta_enabled: bool = True) -> MimicHead:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FF]))
    scale = math.sqrt(1.0 / rep_dim)
    return MimicHead(
        query_proj=Tensor(rng.normal(0.0, scale, (rep_dim, rep_dim)), requires_grad=True),
        key_proj=Tensor(rng.normal(0.0, scale, (rep_dim, rep_dim)), requires_grad=True),
        value_proj=Tensor(rng.normal(0.0, scale, (rep_dim, rep_dim)), requires_grad=True),
        beta=np.ones((1, form_count)),
        beta_enabled=beta_enabled,
    )


@dataclass(frozen=True)
class AcflConfig:
    """Switches for the cross-form mimicking objective.

    The categorical-map channel is the default: at this package's scale
    (tens of training minutes, 64-dim embeddings, a few hundred samples)
    mimicking raw embeddings regresses each target onto a mixture of
    arbitrarily-based frozen feature fields and reliably destroys the
    classification objective, while class-probability mimicking transfers
    cleanly.  The feature channel stays available for ablation.
    """

    mode: str = "online"  # "online" or "offline"
    channels: tuple[Channel, ...] = (Channel.CATMAP,)
    source_mask: tuple[bool, ...] = (True, True, True)
    beta_enabled: bool = True
    beta_override: tuple[float, ...] | None = None  # diagnostic hook, fixed beta
    mimic_weight: float = 1.0
    detach_complementary: bool = False

    def __post_init__(self):
        if self.mode not in ("online", "offline"):
            raise ConfigError(f"unknown mimic mode {self.mode!r}")
        if not self.channels:
            raise ConfigError("at least one representation channel is required")
        if len(set(self.channels)) != len(self.channels):
            raise ConfigError("duplicate channels")
        if not any(self.source_mask):
            raise ConfigError("source mask disables every source")
        if self.beta_override is not None:
            if len(self.beta_override) != len(self.source_mask):
                raise ConfigError("beta override length must match the form count")
            arr = np.asarray(self.beta_override)
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ConfigError(f"beta override must lie in [0, 1], got {self.beta_override}")
        if self.mimic_weight < 0:
            raise ConfigError("mimic weight must be nonnegative")

    @property
    def mask_array(self) -> np.ndarray:
        return np.asarray(self.source_mask, dtype=bool)


# ---------------------------------------------------------------------------
# the four construction steps


def compute_attention(
    targets: RepresentationSet,
    sources: RepresentationSet,
    head: MimicHead,
    source_mask: np.ndarray | None = None,
) -> Tensor:
    """Row-stochastic importance of every source form for each target row.

    Rows are target forms, columns source forms; masked-out sources get weight
    exactly zero and the rest renormalize.
    """
    if targets.rep_dim != sources.rep_dim or targets.rep_dim != head.rep_dim:
        raise DimensionError(
            f"rep dims disagree: targets {targets.rep_dim}, sources {sources.rep_dim}, "
            f"head {head.rep_dim}"
        )
    if targets.channel is not sources.channel:
        raise ValidationError("attention mixes channels")
    q = tz.matmul(targets.matrix, tz.transpose(head.query_proj))
    k = tz.matmul(sources.matrix, tz.transpose(head.key_proj))
    logits = tz.scale(tz.matmul(q, tz.transpose(k)), 1.0 / math.sqrt(head.rep_dim))
    return tz.softmax_rows(logits, mask=source_mask)


def compute_reference(attention: Tensor, sources: RepresentationSet, head: MimicHead) -> Tensor:
    """Beta-scaled attention applied to the source rows."""
    if attention.shape[1] != sources.form_count:
        raise DimensionError(
            f"attention has {attention.shape[1]} columns, {sources.form_count} sources"
        )
    beta = head.effective_beta()
    _check_beta_range(beta)
    if beta.shape[1] != sources.form_count:
        raise DimensionError(f"beta {beta.shape} vs {sources.form_count} sources")
    scaled = tz.broadcast_mul_row(attention, Tensor(beta))
    return tz.matmul(scaled, sources.matrix)


def compute_gate(targets: RepresentationSet, reference: Tensor, head: MimicHead) -> Tensor:
    """Per-dimension openness of each target to the referenced mixture."""
    if reference.shape != targets.matrix.shape:
        raise DimensionError(f"reference {reference.shape} vs targets {targets.matrix.shape}")
    diff = tz.sub(targets.matrix, reference)
    return tz.sigmoid(tz.matmul(diff, tz.transpose(head.value_proj)))


def compute_complementary(gate: Tensor, reference: Tensor) -> Tensor:
    """Gated reference: what each target is asked to move toward."""
    return tz.mul(gate, reference)


@dataclass
class MimicOutputs:
    attention: Tensor
    reference: Tensor
    gate: Tensor
    complementary: Tensor


def complementary_chain(
    detached_targets: RepresentationSet,
    sources: RepresentationSet,
    head: MimicHead,
    source_mask: np.ndarray | None = None,
    detach_complementary: bool = False,
) -> MimicOutputs:
    """Attention -> reference -> gate -> complementary, in one call.

    `detached_targets` must already be gradient-free copies of the target
    representations; sources are value-only by construction.
    """
    attention = compute_attention(detached_targets, sources, head, source_mask)
    reference = compute_reference(attention, sources, head)
    gate = compute_gate(detached_targets, reference, head)
    complementary = compute_complementary(gate, reference)
    if detach_complementary:
        complementary = complementary.detach()
    return MimicOutputs(attention, reference, gate, complementary)


# ---------------------------------------------------------------------------
# losses


def classification_loss(catmap: Tensor, onehot: np.ndarray, squash: str = "sigmoid") -> Tensor:
    """Mean-over-rows classification loss on squashed activations.

    sigmoid squash: per-class binary cross-entropy summed over classes;
    softmax squash: cross-entropy of the true class.
    """
    if catmap.shape != onehot.shape:
        raise DimensionError(f"catmap {catmap.shape} vs labels {onehot.shape}")
    rows = catmap.shape[0]
    y = Tensor(onehot)
    if squash == "sigmoid":
        anti = Tensor(1.0 - onehot)
        term = tz.add(
            tz.mul(y, tz.log(catmap)),
            tz.mul(anti, tz.log(tz.add_scalar(tz.scale(catmap, -1.0), 1.0))),
        )
    elif squash == "softmax":
        term = tz.mul(y, tz.log(catmap))
    else:
        raise ConfigError(f"unknown squash {squash!r}")
    return tz.scale(tz.sum_all(term), -1.0 / rows)


def mimic_loss(constructed: Tensor, target: Tensor) -> Tensor:
    """Sum of squared differences over every entry; no normalization."""
    if constructed.shape != target.shape:
        raise DimensionError(f"mimic loss shapes differ: {constructed.shape} vs {target.shape}")
    diff = tz.sub(constructed, target)
    return tz.sum_all(tz.mul(diff, diff))


def total_loss(
    classification_losses: Sequence[Tensor],
    mimic_losses: Mapping[Channel, Sequence[Tensor]] | None = None,
    mimic_weight: float = 1.0,
) -> Tensor:
    """Average over target forms of (classification + weighted mimic terms)."""
    count = len(classification_losses)
    if count == 0:
        raise ValidationError("total loss needs at least one target form")
    acc = classification_losses[0]
    for term in classification_losses[1:]:
        acc = tz.add(acc, term)
    if mimic_losses:
        for channel_terms in mimic_losses.values():
            if len(channel_terms) != count:
                raise ValidationError("mimic losses must align with target forms")
            for term in channel_terms:
                acc = tz.add(acc, tz.scale(term, mimic_weight))
    return tz.scale(acc, 1.0 / count)


# ---------------------------------------------------------------------------
# beta maintenance


def update_beta(head: MimicHead, per_form_accuracy: Sequence[float], mode: str) -> MimicHead:
    """Refresh the per-source quality factors from measured accuracies.

    Both modes score sources on the training split, the material actually
    being taught; held-out data never feeds back into the objective.

    offline: set once from the frozen sources' accuracies.
    online: exponential moving average 0.9*beta + 0.1*accuracy; the first
    measurement seeds beta directly.
    """
    acc = np.asarray(per_form_accuracy, dtype=np.float64)[None, :]
    if acc.shape[1] != head.form_count:
        raise DimensionError(f"accuracy vector {acc.shape} vs {head.form_count} forms")
    _check_beta_range(acc)
    if mode == "offline":
        head.beta = acc.copy()
        head.beta_seeded = True
    elif mode == "online":
        if head.beta_seeded:
            head.beta = 0.9 * head.beta + 0.1 * acc
        else:
            head.beta = acc.copy()
            head.beta_seeded = True
    else:
        raise ConfigError(f"unknown mimic mode {mode!r}")
    _check_beta_range(head.beta)
    return head


# ---------------------------------------------------------------------------
# source providers


class SourceProvider:
    """Yields value-only per-form source representations for a batch."""

    def batch_sources(self, batch_inputs, target_outputs) -> dict[Channel, np.ndarray]:
        raise NotImplementedError


class OnlineSources(SourceProvider):
    """Peers mimic each other: sources are detached copies of the current
    targets' outputs on the same batch."""

    def batch_sources(self, batch_inputs, target_outputs):
        del batch_inputs
        out: dict[Channel, np.ndarray] = {}
        out[Channel.FEATURE] = np.stack(
            [o.feature.data for o in target_outputs], axis=0
        )
        out[Channel.CATMAP] = np.stack([o.catmap.data for o in target_outputs], axis=0)
        return out


class OfflineSources(SourceProvider):
    """Frozen pretrained models, one per unmasked form, run in eval mode.

    Masked forms contribute zero rows (their attention columns are zero, so
    the values never matter).
    """

    def __init__(self, models, adjacency: np.ndarray, mask: np.ndarray):
        from .backbone import ModelParams  # local import avoids a cycle at import time

        self.models: dict[Form, "ModelParams"] = dict(models)
        self.adjacency = adjacency
        self.mask = np.asarray(mask, dtype=bool)
        for i, form in enumerate(FORMS[: len(self.mask)]):
            if self.mask[i] and form not in self.models:
                raise ConfigError(f"offline sources missing a model for form {form.value}")

    def batch_sources(self, batch_inputs, target_outputs):
        from .backbone import forward_batch

        del target_outputs
        feats, cats = [], []
        for i, form in enumerate(FORMS[: len(self.mask)]):
            if not self.mask[i]:
                some = next(iter(self.models.values()))
                b = next(iter(batch_inputs.values())).shape[0]
                feats.append(np.zeros((b, some.config.feature_dim)))
                cats.append(np.zeros((b, some.config.class_count)))
                continue
            out = forward_batch(batch_inputs[form], self.models[form], self.adjacency, train=False)
            feats.append(out.feature.data)
            cats.append(out.catmap.data)
        return {Channel.FEATURE: np.stack(feats), Channel.CATMAP: np.stack(cats)}


def build_sources(
    config: AcflConfig,
    frozen_models=None,
    adjacency: np.ndarray | None = None,
) -> SourceProvider:
    """Construct the provider matching the configured mimic mode."""
    if config.mode == "online":
        return OnlineSources()
    if frozen_models is None or adjacency is None:
        raise ConfigError("offline mode needs frozen source models and an adjacency")
    return OfflineSources(frozen_models, adjacency, config.mask_array)
