"""Experiment engine: baselines, cross-form runs, evaluation, fusion, reports.

A run owns one output directory and writes config.json, one checkpoint per
trained form, metrics.jsonl (one record per epoch), importance.jsonl (mean
attention rows per evaluation pass), and report.json.  Every number a run
emits is a pure function of (config, seed); wall-clock time appears only in
report.json so the metric stream stays byte-reproducible.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz
from .backbone import (
    BackboneConfig,
    ModelOutputs,
    ModelParams,
    classify,
    forward_batch,
    init_params,
    normalized_adjacency,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .crossform import (
    AcflConfig,
    Channel,
    MimicHead,
    RepresentationSet,
    Role,
    build_sources,
    complementary_chain,
    compute_attention,
    init_mimic_head,
    mimic_loss,
    total_loss,
    update_beta,
)
from .dataio import load_dataset
from .datagen import Dataset, apply_channel_stats, channel_stats
from .errors import ConfigError, DimensionError, ValidationError
from .skeleton import FORMS, Form, SkeletonTopology, chain_topology, default_topology, derive_bone, derive_hybrid
from .tensor import Tape, Tensor, backward

TRAIN_FILE = "train.ds"
TEST_FILE = "test.ds"

# seed-stream purposes, mixed into SeedSequence entropy
_SEED_INIT = 0x10
_SEED_SHUFFLE = 0x5F
_SEED_HEAD = 0x8EAD


@dataclass(frozen=True)
class TrainConfig:
    """One run's worth of knobs; (config, seed) determines every output byte."""

    data_dir: str
    out_dir: str
    epochs: int = 45
    batch_size: int = 32
    lr: float = 0.1
    lr_drop_epochs: tuple[int, ...] = (25, 38)
    lr_drop_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 4e-4
    seed: int = 0
    backbone: BackboneConfig = BackboneConfig()
    acfl: AcflConfig | None = None
    source_dir: str | None = None  # pretrained checkpoints for frozen sources

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not 0 < self.lr_drop_factor <= 1:
            raise ConfigError(f"drop factor must lie in (0, 1], got {self.lr_drop_factor}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {self.weight_decay}")
        drops = self.lr_drop_epochs
        if any(d < 1 or d >= self.epochs for d in drops):
            raise ConfigError(f"drop epochs must lie in [1, epochs), got {drops}")
        if any(b >= a for a, b in zip(drops[1:], drops)):
            raise ConfigError(f"drop epochs must increase strictly, got {drops}")


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the rate drops by the factor at each drop epoch, inclusive."""
    passed = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.lr * cfg.lr_drop_factor**passed


def derive_seed(*components: int) -> int:
    return int(np.random.SeedSequence(list(components)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# data assembly


def topology_for(joint_count: int) -> SkeletonTopology:
    """Dataset files carry no topology; 9 joints means the default figure."""
    default = default_topology()
    if joint_count == default.joint_count:
        return default
    return chain_topology(joint_count)


def _form_stack(samples, topology: SkeletonTopology, form: Form) -> np.ndarray:
    if form is Form.JOINT:
        return np.stack([s.data for s in samples])
    bones = [derive_bone(s, topology) for s in samples]
    if form is Form.BONE:
        return np.stack([b.data for b in bones])
    return np.stack([derive_hybrid(s, b).data for s, b in zip(samples, bones)])


@dataclass
class LoadedData:
    """Standardized per-form arrays for both splits, plus shared labels."""

    train_x: dict[Form, np.ndarray]
    test_x: dict[Form, np.ndarray]
    train_y: np.ndarray
    test_y: np.ndarray
    class_count: int
    topology: SkeletonTopology


def load_split_arrays(data_dir: str, forms: tuple[Form, ...]) -> LoadedData:
    """Load the joint-form dataset pair and derive, then standardize, each form.

    Standardization statistics come from the training split of the same form.
    """
    train = load_dataset(os.path.join(data_dir, TRAIN_FILE))
    test = load_dataset(os.path.join(data_dir, TEST_FILE))
    if train.class_count != test.class_count:
        raise ConfigError(
            f"split class counts disagree: {train.class_count} vs {test.class_count}"
        )
    if train.sample_shape != test.sample_shape:
        raise ConfigError(
            f"split sample shapes disagree: {train.sample_shape} vs {test.sample_shape}"
        )
    topology = topology_for(train.sample_shape[2])
    train_x: dict[Form, np.ndarray] = {}
    test_x: dict[Form, np.ndarray] = {}
    for form in forms:
        raw_train = _form_stack(train.samples, topology, form)
        raw_test = _form_stack(test.samples, topology, form)
        mean, std = channel_stats(raw_train)
        train_x[form] = apply_channel_stats(raw_train, mean, std)
        test_x[form] = apply_channel_stats(raw_test, mean, std)
    _, train_y = train.stacked()
    _, test_y = test.stacked()
    return LoadedData(
        train_x=train_x,
        test_x=test_x,
        train_y=train_y,
        test_y=test_y,
        class_count=train.class_count,
        topology=topology,
    )


# ---------------------------------------------------------------------------
# optimization


@dataclass
class SgdState:
    """Heavy-ball SGD with decoupled-from-nothing classic weight decay."""

    momentum: float
    weight_decay: float
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, named_params: dict[str, Tensor], grads, lr: float) -> None:
        for name, p in named_params.items():
            g = grads[p]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self.buffers.get(name)
            buf = g.copy() if buf is None else self.momentum * buf + g
            self.buffers[name] = buf
            p.data = np.ascontiguousarray(p.data - lr * buf)


def _named_trainables(
    models: dict[Form, ModelParams], heads: dict[Channel, MimicHead]
) -> dict[str, Tensor]:
    named: dict[str, Tensor] = {}
    for form, model in models.items():
        for pname, p in model.trainables().items():
            named[f"{form.value}.{pname}"] = p
    for ch, head in heads.items():
        for pname, p in head.trainables().items():
            named[f"mimic.{ch.value}.{pname}"] = p
    return named


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalOutputs:
    accuracy: float
    predictions: np.ndarray  # (count,)
    features: np.ndarray     # (count, feature_dim)
    catmaps: np.ndarray      # (count, class_count)
    per_class: dict[int, tuple[int, int]]  # class -> (support, correct)


def evaluate_arrays(
    model: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    adjacency: np.ndarray,
    batch_size: int = 256,
) -> EvalOutputs:
    """Eval-mode pass over a stacked array; running statistics, no recording."""
    if x.ndim != 5:
        raise ConfigError(f"expected stacked rank-5 data, got shape {x.shape}")
    if x.shape[4] != model.config.in_channels:
        raise ConfigError(
            f"data has {x.shape[4]} channels, model expects {model.config.in_channels}"
        )
    if x.shape[0] != y.shape[0]:
        raise ConfigError(f"{x.shape[0]} samples vs {y.shape[0]} labels")
    feats, cats = [], []
    for lo in range(0, x.shape[0], batch_size):
        out = forward_batch(x[lo : lo + batch_size], model, adjacency, train=False)
        feats.append(out.feature.data)
        cats.append(out.catmap.data)
    features = np.concatenate(feats)
    catmaps = np.concatenate(cats)
    predictions = classify(catmaps)
    per_class: dict[int, tuple[int, int]] = {}
    for c in range(model.config.class_count):
        sel = y == c
        per_class[c] = (int(sel.sum()), int((predictions[sel] == c).sum()))
    correct = sum(hit for _, hit in per_class.values())
    return EvalOutputs(
        accuracy=correct / x.shape[0],
        predictions=predictions,
        features=features,
        catmaps=catmaps,
        per_class=per_class,
    )


def evaluate_checkpoint(checkpoint_path: str, data_dir: str, split: str = "test") -> dict:
    """Reload a trained model and score it on one split of a dataset pair."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    bundle = load_checkpoint(checkpoint_path)
    form = bundle.model.config.input_form
    data = load_split_arrays(data_dir, (form,))
    if data.class_count != bundle.model.config.class_count:
        raise ConfigError(
            f"dataset has {data.class_count} classes, "
            f"model expects {bundle.model.config.class_count}"
        )
    x = data.train_x[form] if split == "train" else data.test_x[form]
    y = data.train_y if split == "train" else data.test_y
    adjacency = normalized_adjacency(data.topology)
    ev = evaluate_arrays(bundle.model, x, y, adjacency)
    return {
        "form": form.value,
        "split": split,
        "accuracy": ev.accuracy,
        "per_class": per_class_report(ev.per_class),
        "predictions": ev.predictions,
        "catmaps": ev.catmaps,
    }


def per_class_report(
    per_class: dict[int, tuple[int, int]], hard_count: int = 10
) -> list[dict]:
    """Rows sorted by ascending accuracy; the weakest classes carry a flag.

    Classes absent from the split report a null accuracy and sort last.
    """
    present, absent = [], []
    for c in sorted(per_class):
        support, correct = per_class[c]
        if support > 0:
            present.append({"class": c, "support": support, "accuracy": correct / support})
        else:
            absent.append({"class": c, "support": 0, "accuracy": None})
    present.sort(key=lambda r: (r["accuracy"], r["class"]))
    flagged = min(hard_count, len(present))
    for i, row in enumerate(present):
        row["hard"] = i < flagged
    for row in absent:
        row["hard"] = False
    return present + absent


def confidence_weights(catmaps) -> list[float]:
    """Label-free fusion weights: each stream's mean peak activation.

    A stream that is sure of its answers (whatever they are) gets more say
    than one hedging across classes; labels never enter, so the weighting
    is legal on unlabeled data.
    """
    if not catmaps:
        raise ValidationError("need at least one stream to weight")
    return [float(np.asarray(k, dtype=np.float64).max(axis=1).mean()) for k in catmaps]


def fuse_streams(catmaps, weights) -> np.ndarray:
    """Late fusion: argmax of the weighted sum of per-stream activation maps."""
    if len(catmaps) != len(weights):
        raise DimensionError(f"{len(catmaps)} streams vs {len(weights)} weights")
    if not catmaps:
        raise ValidationError("fusion needs at least one stream")
    if any(w < 0 for w in weights):
        raise ValidationError(f"fusion weights must be nonnegative, got {list(weights)}")
    stacks = [np.asarray(k, dtype=np.float64) for k in catmaps]
    shape = stacks[0].shape
    for k in stacks[1:]:
        if k.shape != shape:
            raise DimensionError(f"stream shapes disagree: {k.shape} vs {shape}")
    mixed = sum(w * k for w, k in zip(weights, stacks))
    return np.argmax(mixed, axis=1)


# ---------------------------------------------------------------------------
# run products


@dataclass
class RunResult:
    mode: str
    run_dir: str
    forms: tuple[Form, ...]
    final_test_acc: dict[Form, float]
    final_train_acc: dict[Form, float]
    per_class: dict[Form, list[dict]]
    checkpoint_paths: dict[Form, str]
    epochs: list[dict]
    wall_seconds: float


def _json_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def config_payload(cfg: TrainConfig, mode: str, forms: tuple[Form, ...]) -> dict:
    bb = cfg.backbone
    acfl = None
    if cfg.acfl is not None:
        acfl = {
            "mode": cfg.acfl.mode,
            "channels": [c.value for c in cfg.acfl.channels],
            "source_mask": list(cfg.acfl.source_mask),
            "beta_enabled": cfg.acfl.beta_enabled,
            "beta_override": (
                None if cfg.acfl.beta_override is None else list(cfg.acfl.beta_override)
            ),
            "mimic_weight": cfg.acfl.mimic_weight,
            "detach_complementary": cfg.acfl.detach_complementary,
        }
    return {
        "mode": mode,
        "forms": [f.value for f in forms],
        "data_dir": cfg.data_dir,
        "out_dir": cfg.out_dir,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "lr_drop_epochs": list(cfg.lr_drop_epochs),
        "lr_drop_factor": cfg.lr_drop_factor,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "seed": cfg.seed,
        "backbone": {
            "base_channels": bb.in_channels,
            "class_count": bb.class_count,
            "stage_widths": list(bb.stage_widths),
            "blocks_per_stage": list(bb.blocks_per_stage),
            "temporal_kernel": bb.temporal_kernel,
            "temporal_strides": list(bb.temporal_strides),
            "squash": bb.squash,
        },
        "acfl": acfl,
        "source_dir": cfg.source_dir,
    }


def config_from_dict(payload: dict) -> tuple[TrainConfig, str, tuple[Form, ...]]:
    """Rebuild a TrainConfig (plus mode and forms) from a config.json payload.

    Only keys present in the payload are passed through; everything absent
    falls back to the dataclass defaults, so those stay the single source
    of truth.
    """
    bb = payload.get("backbone", {})
    bkw: dict = {}
    if "base_channels" in bb:
        bkw["in_channels"] = int(bb["base_channels"])
    if "class_count" in bb:
        bkw["class_count"] = int(bb["class_count"])
    for key in ("stage_widths", "blocks_per_stage", "temporal_strides"):
        if key in bb:
            bkw[key] = tuple(int(v) for v in bb[key])
    if "temporal_kernel" in bb:
        bkw["temporal_kernel"] = int(bb["temporal_kernel"])
    if "squash" in bb:
        bkw["squash"] = str(bb["squash"])
    backbone = BackboneConfig(**bkw)

    ac = payload.get("acfl")
    acfl = None
    if ac is not None:
        akw: dict = {}
        if "mode" in ac:
            akw["mode"] = str(ac["mode"])
        if "channels" in ac:
            akw["channels"] = tuple(Channel(c) for c in ac["channels"])
        if "source_mask" in ac:
            akw["source_mask"] = tuple(bool(b) for b in ac["source_mask"])
        if "beta_enabled" in ac:
            akw["beta_enabled"] = bool(ac["beta_enabled"])
        if ac.get("beta_override") is not None:
            akw["beta_override"] = tuple(float(v) for v in ac["beta_override"])
        if "mimic_weight" in ac:
            akw["mimic_weight"] = float(ac["mimic_weight"])
        if "detach_complementary" in ac:
            akw["detach_complementary"] = bool(ac["detach_complementary"])
        acfl = AcflConfig(**akw)

    tkw: dict = {
        "data_dir": payload["data_dir"],
        "out_dir": payload["out_dir"],
        "backbone": backbone,
        "acfl": acfl,
        "source_dir": payload.get("source_dir"),
    }
    for key, cast in (
        ("epochs", int),
        ("batch_size", int),
        ("lr", float),
        ("lr_drop_factor", float),
        ("momentum", float),
        ("weight_decay", float),
        ("seed", int),
    ):
        if key in payload:
            tkw[key] = cast(payload[key])
    if "lr_drop_epochs" in payload:
        tkw["lr_drop_epochs"] = tuple(int(e) for e in payload["lr_drop_epochs"])
    cfg = TrainConfig(**tkw)
    mode = payload.get("mode", "sfrl")
    forms = tuple(Form(f) for f in payload.get("forms", [f.value for f in FORMS]))
    return cfg, mode, forms


# ---------------------------------------------------------------------------
# training internals


def _channel_matrix(outputs: ModelOutputs, channel: Channel) -> Tensor:
    return outputs.feature if channel is Channel.FEATURE else outputs.catmap


def _stable_classification_loss(outputs: ModelOutputs, onehot: np.ndarray, squash: str) -> Tensor:
    """Same value as the squash-then-log reference, bounded gradient."""
    if squash == "sigmoid":
        return tz.sigmoid_bce_rows(outputs.logits, onehot)
    return tz.softmax_ce_rows(outputs.logits, onehot)


def _load_frozen_sources(
    cfg: TrainConfig, class_count: int, feature_dim: int, mask: np.ndarray
) -> dict[Form, ModelParams]:
    if not cfg.source_dir:
        raise ConfigError("offline mode needs a directory of pretrained source checkpoints")
    frozen: dict[Form, ModelParams] = {}
    for i, form in enumerate(FORMS):
        if not mask[i]:
            continue
        path = os.path.join(cfg.source_dir, f"checkpoint_{form.value}.ckpt")
        if not os.path.exists(path):
            raise ConfigError(f"missing source checkpoint for form {form.value}: {path}")
        bundle = load_checkpoint(path)
        model = bundle.model
        if model.config.input_form is not form:
            raise ConfigError(
                f"checkpoint at {path} holds a {model.config.input_form.value} model, "
                f"expected {form.value}"
            )
        if model.config.class_count != class_count:
            raise ConfigError(
                f"source for {form.value} has {model.config.class_count} classes, "
                f"dataset has {class_count}"
            )
        if model.config.feature_dim != feature_dim:
            raise ConfigError(
                f"source for {form.value} emits {model.config.feature_dim}-dim features, "
                f"targets expect {feature_dim}"
            )
        model.set_requires_grad(False)
        frozen[form] = model
    return frozen


def _score_frozen_sources(
    frozen: dict[Form, ModelParams],
    data: LoadedData,
    adjacency: np.ndarray,
    mask: np.ndarray,
    feature_dim: int,
) -> tuple[dict[Channel, np.ndarray], list[float]]:
    """Frozen sources scored once at run start.

    Returns per-channel (form, sample, dim) test-split stacks for importance
    dumps plus the per-form train-split accuracy vector that seeds beta.
    Beta grades each source on the material being taught, so it comes from
    the training split; held-out data never leaks into the objective.
    Masked forms contribute zeros.
    """
    count = data.test_y.shape[0]
    feats, cats, accs = [], [], []
    for i, form in enumerate(FORMS):
        if not mask[i]:
            feats.append(np.zeros((count, feature_dim)))
            cats.append(np.zeros((count, data.class_count)))
            accs.append(0.0)
            continue
        ev = evaluate_arrays(frozen[form], data.test_x[form], data.test_y, adjacency)
        feats.append(ev.features)
        cats.append(ev.catmaps)
        train_ev = evaluate_arrays(
            frozen[form], data.train_x[form], data.train_y, adjacency
        )
        accs.append(train_ev.accuracy)
    return (
        {Channel.FEATURE: np.stack(feats), Channel.CATMAP: np.stack(cats)},
        accs,
    )


def _batch_losses(
    acfl: AcflConfig,
    heads: dict[Channel, MimicHead],
    outputs: list[ModelOutputs],
    sources: dict[Channel, np.ndarray],
) -> dict[Channel, list[Tensor]]:
    """Per-form mimic losses for one batch, batch-mean, keyed by channel.

    Target rows enter the attention and gate as constants; the gradient
    reaches each backbone only through the direct difference against the
    constructed representation.
    """
    form_count = len(outputs)
    batch = outputs[0].feature.shape[0]
    mask = acfl.mask_array
    per_channel: dict[Channel, list[Tensor]] = {}
    for ch in acfl.channels:
        head = heads[ch]
        graph = [_channel_matrix(o, ch) for o in outputs]
        src = sources[ch]
        totals: list[Tensor | None] = [None] * form_count
        for n in range(batch):
            rows = tz.stack_rows([tz.slice_row(g, n) for g in graph])
            targets = RepresentationSet(rows.detach(), ch, Role.TARGET)
            per_sample = RepresentationSet(
                Tensor(np.ascontiguousarray(src[:, n, :])), ch, Role.SOURCE
            )
            chain = complementary_chain(
                targets, per_sample, head, mask, acfl.detach_complementary
            )
            for i in range(form_count):
                term = mimic_loss(
                    tz.slice_row(chain.complementary, i), tz.slice_row(rows, i)
                )
                totals[i] = term if totals[i] is None else tz.add(totals[i], term)
        per_channel[ch] = [tz.scale(t, 1.0 / batch) for t in totals]
    return per_channel


def _mean_attention(
    heads: dict[Channel, MimicHead],
    channels: tuple[Channel, ...],
    target_stacks: dict[Channel, np.ndarray],
    source_stacks: dict[Channel, np.ndarray],
    mask: np.ndarray,
) -> dict[Channel, np.ndarray]:
    """Importance rows for the dump: attention averaged over a split."""
    out: dict[Channel, np.ndarray] = {}
    with tz.no_tape():
        for ch in channels:
            head = heads[ch]
            tgt = target_stacks[ch]
            src = source_stacks[ch]
            count = tgt.shape[1]
            acc = np.zeros((tgt.shape[0], src.shape[0]))
            for n in range(count):
                t_set = RepresentationSet(
                    Tensor(np.ascontiguousarray(tgt[:, n, :])), ch, Role.TARGET
                )
                s_set = RepresentationSet(
                    Tensor(np.ascontiguousarray(src[:, n, :])), ch, Role.SOURCE
                )
                acc += compute_attention(t_set, s_set, head, mask).data
            out[ch] = acc / count
    return out


def _train_run(cfg: TrainConfig, mode: str, forms: tuple[Form, ...]) -> RunResult:
    t_start = time.perf_counter()
    acfl = cfg.acfl
    data = load_split_arrays(cfg.data_dir, forms)
    adjacency = normalized_adjacency(data.topology)
    base = replace(cfg.backbone, class_count=data.class_count)
    base_channels = cfg.backbone.in_channels

    models: dict[Form, ModelParams] = {}
    for i, form in enumerate(FORMS):
        if form not in forms:
            continue
        models[form] = init_params(
            base.for_form(form, base_channels), seed=derive_seed(cfg.seed, _SEED_INIT, i)
        )

    heads: dict[Channel, MimicHead] = {}
    provider = None
    frozen: dict[Form, ModelParams] = {}
    frozen_hashes: dict[Form, str] = {}
    source_test: dict[Channel, np.ndarray] | None = None
    if acfl is not None:
        dims = {Channel.FEATURE: base.feature_dim, Channel.CATMAP: data.class_count}
        for j, ch in enumerate(acfl.channels):
            heads[ch] = init_mimic_head(
                dims[ch],
                len(FORMS),
                seed=derive_seed(cfg.seed, _SEED_HEAD, j),
                beta_enabled=acfl.beta_enabled,
            )
            if acfl.beta_override is not None:
                heads[ch].beta = np.asarray(acfl.beta_override, dtype=np.float64)[None, :]
                heads[ch].beta_seeded = True
        if acfl.mode == "offline":
            frozen = _load_frozen_sources(cfg, data.class_count, base.feature_dim, acfl.mask_array)
            frozen_hashes = {f: m.byte_hash() for f, m in frozen.items()}
            provider = build_sources(acfl, frozen_models=frozen, adjacency=adjacency)
            source_test, source_accs = _score_frozen_sources(
                frozen, data, adjacency, acfl.mask_array, base.feature_dim
            )
            if acfl.beta_override is None:
                for head in heads.values():
                    update_beta(head, source_accs, mode="offline")
        else:
            provider = build_sources(acfl)

    named = _named_trainables(models, heads)
    optimizer = SgdState(momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SEED_SHUFFLE]))
    onehot_basis = np.eye(data.class_count)
    n_train = data.train_y.shape[0]
    form_count = len(forms)

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as fh:
        json.dump(config_payload(cfg, mode, forms), fh, sort_keys=True, indent=2)
        fh.write("\n")

    epoch_records: list[dict] = []
    final_eval: dict[Form, EvalOutputs] = {}
    final_train_acc: dict[Form, float] = {}
    metrics_fh = open(os.path.join(cfg.out_dir, "metrics.jsonl"), "w")
    importance_fh = open(os.path.join(cfg.out_dir, "importance.jsonl"), "w")
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = learning_rate(cfg, epoch)
            perm = shuffle_rng.permutation(n_train)
            sums = {"total": 0.0, "s": 0.0, "d_feature": 0.0, "d_catmap": 0.0}
            batches = 0
            seen = 0
            correct = {form: 0 for form in forms}

            for lo in range(0, n_train, cfg.batch_size):
                idx = perm[lo : lo + cfg.batch_size]
                yb = data.train_y[idx]
                onehot = onehot_basis[yb]
                xb = {form: data.train_x[form][idx] for form in forms}

                with Tape() as tape:
                    outputs = [
                        forward_batch(xb[form], models[form], adjacency, train=True)
                        for form in forms
                    ]
                    ce_terms = [
                        _stable_classification_loss(o, onehot, base.squash) for o in outputs
                    ]
                    mimic_terms: dict[Channel, list[Tensor]] = {}
                    if acfl is not None:
                        src = provider.batch_sources(xb, outputs)
                        mimic_terms = _batch_losses(acfl, heads, outputs, src)
                    loss = total_loss(
                        ce_terms,
                        mimic_terms or None,
                        acfl.mimic_weight if acfl is not None else 1.0,
                    )
                grads = backward(loss, tape)
                optimizer.step(named, grads, lr)

                sums["total"] += loss.item()
                sums["s"] += sum(t.item() for t in ce_terms) / form_count
                for key, ch in (("d_feature", Channel.FEATURE), ("d_catmap", Channel.CATMAP)):
                    if ch in mimic_terms:
                        sums[key] += sum(t.item() for t in mimic_terms[ch]) / form_count
                batches += 1
                seen += len(idx)
                for form, out in zip(forms, outputs):
                    correct[form] += int((classify(out.catmap.data) == yb).sum())

            train_acc = {form: correct[form] / seen for form in forms}
            test_eval = {
                form: evaluate_arrays(models[form], data.test_x[form], data.test_y, adjacency)
                for form in forms
            }

            if acfl is not None and acfl.mode == "online" and acfl.beta_override is None:
                accs = [train_acc.get(form, 0.0) for form in FORMS]
                for head in heads.values():
                    update_beta(head, accs, mode="online")

            if acfl is not None:
                target_stacks = {
                    Channel.FEATURE: np.stack([test_eval[f].features for f in forms]),
                    Channel.CATMAP: np.stack([test_eval[f].catmaps for f in forms]),
                }
                source_stacks = source_test if acfl.mode == "offline" else target_stacks
                mean_a = _mean_attention(
                    heads, acfl.channels, target_stacks, source_stacks, acfl.mask_array
                )
                for ch in acfl.channels:
                    beta_row = heads[ch].effective_beta()[0]
                    for i, form in enumerate(forms):
                        importance_fh.write(
                            _json_line(
                                {
                                    "epoch": epoch,
                                    "target_form": form.value,
                                    "channel": ch.value,
                                    "A_row": [float(v) for v in mean_a[ch][i]],
                                    "beta": [float(v) for v in beta_row],
                                }
                            )
                        )
                importance_fh.flush()

            record = {
                "epoch": epoch,
                "lr": lr,
                "loss_total": sums["total"] / batches,
                "loss_s": sums["s"] / batches,
                "loss_d_feature": sums["d_feature"] / batches,
                "loss_d_catmap": sums["d_catmap"] / batches,
                "acc_train": {form.value: train_acc[form] for form in forms},
                "acc_test": {form.value: test_eval[form].accuracy for form in forms},
            }
            metrics_fh.write(_json_line(record))
            metrics_fh.flush()
            epoch_records.append(record)
            final_eval = test_eval
            final_train_acc = train_acc
    finally:
        metrics_fh.close()
        importance_fh.close()

    if frozen:
        for form, model in frozen.items():
            if model.byte_hash() != frozen_hashes[form]:
                raise ValidationError(
                    f"frozen source parameters for {form.value} changed during training"
                )

    checkpoint_paths: dict[Form, str] = {}
    for form in forms:
        path = os.path.join(cfg.out_dir, f"checkpoint_{form.value}.ckpt")
        save_checkpoint(
            path,
            models[form],
            heads=heads,
            metadata={"form": form.value, "mode": mode, "seed": cfg.seed, "epoch": cfg.epochs},
        )
        checkpoint_paths[form] = path

    wall = time.perf_counter() - t_start
    per_class = {form: per_class_report(final_eval[form].per_class) for form in forms}
    report = {
        "mode": mode,
        "seed": cfg.seed,
        "forms": [f.value for f in forms],
        "wall_seconds": wall,
        "acc_test": {f.value: final_eval[f].accuracy for f in forms},
        "acc_train": {f.value: final_train_acc[f] for f in forms},
        "per_class": {f.value: per_class[f] for f in forms},
        "checkpoints": {f.value: os.path.basename(p) for f, p in checkpoint_paths.items()},
    }
    if heads:
        report["beta"] = {
            ch.value: [float(v) for v in heads[ch].effective_beta()[0]] for ch in heads
        }
    if frozen_hashes:
        report["source_hashes"] = {f.value: h for f, h in frozen_hashes.items()}
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")

    return RunResult(
        mode=mode,
        run_dir=cfg.out_dir,
        forms=forms,
        final_test_acc={f: final_eval[f].accuracy for f in forms},
        final_train_acc=dict(final_train_acc),
        per_class=per_class,
        checkpoint_paths=checkpoint_paths,
        epochs=epoch_records,
        wall_seconds=wall,
    )


# ---------------------------------------------------------------------------
# public entry points


def train_sfrl(cfg: TrainConfig, form: Form) -> RunResult:
    """Classification-only baseline on a single skeleton form."""
    if cfg.acfl is not None:
        raise ConfigError("the single-form baseline takes no mimic config")
    return _train_run(cfg, "sfrl", (form,))


def train_acfl_online(cfg: TrainConfig) -> RunResult:
    """Co-train all forms; each also mimics its detached peers."""
    acfl = cfg.acfl if cfg.acfl is not None else AcflConfig(mode="online")
    if acfl.mode != "online":
        raise ConfigError(f"online trainer got mimic mode {acfl.mode!r}")
    return _train_run(replace(cfg, acfl=acfl), "acfl-online", FORMS)


def train_acfl_offline(cfg: TrainConfig) -> RunResult:
    """Train all forms against frozen pretrained sources."""
    acfl = cfg.acfl if cfg.acfl is not None else AcflConfig(mode="offline")
    if acfl.mode != "offline":
        raise ConfigError(f"offline trainer got mimic mode {acfl.mode!r}")
    return _train_run(replace(cfg, acfl=acfl), "acfl-offline", FORMS)


def read_jsonl(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
