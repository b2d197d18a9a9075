"""Graph-convolutional backbone over skeleton sequences.

The network is a stem batch norm followed by stages of (graph conv over
joints, depthwise temporal conv) blocks, global average pooling over person,
frame, and joint axes into a feature vector, and a linear classifier squashed
into per-class activations.  Activations are laid out
(batch, person, frame, joint, channel) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import hashlib

import numpy as np

from . import tensor as tz
from .errors import ConfigError, DimensionError
from .skeleton import Form, SkeletonTopology
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def normalized_adjacency(topology: SkeletonTopology) -> np.ndarray:
    """Symmetrically normalized adjacency with self loops: D^-1/2 (A+I) D^-1/2."""
    v = topology.joint_count
    a = np.eye(v)
    for p, c in topology.edges:
        a[p, c] = 1.0
        a[c, p] = 1.0
    deg = a.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    return d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :]


@dataclass(frozen=True)
class BackboneConfig:
    input_form: Form = Form.JOINT
    in_channels: int = 2
    class_count: int = 8
    stage_widths: tuple[int, ...] = (16, 16, 32, 64)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    temporal_kernel: int = 3
    temporal_strides: tuple[int, ...] = (2, 1, 2, 2)
    squash: str = "sigmoid"  # or "softmax"

    def __post_init__(self):
        if len(self.stage_widths) != len(self.blocks_per_stage) or len(
            self.stage_widths
        ) != len(self.temporal_strides):
            raise ConfigError("stage widths, block counts, and strides must align")
        if any(w < 1 for w in self.stage_widths) or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("stage widths and block counts must be positive")
        if self.temporal_kernel % 2 != 1 or self.temporal_kernel < 1:
            raise ConfigError(f"temporal kernel must be odd, got {self.temporal_kernel}")
        if any(s not in (1, 2) for s in self.temporal_strides):
            raise ConfigError(f"temporal strides must be 1 or 2, got {self.temporal_strides}")
        if self.in_channels < 1 or self.class_count < 2:
            raise ConfigError("need >= 1 input channel and >= 2 classes")
        if self.squash not in ("sigmoid", "softmax"):
            raise ConfigError(f"unknown squash {self.squash!r}")

    @property
    def feature_dim(self) -> int:
        return self.stage_widths[-1]

    def for_form(self, form: Form, base_channels: int) -> "BackboneConfig":
        channels = 2 * base_channels if form is Form.HYBRID else base_channels
        return replace(self, input_form=form, in_channels=channels)


@dataclass
class ModelParams:
    """Named learnable tensors plus non-learnable running buffers."""

    config: BackboneConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def trainables(self) -> dict[str, Tensor]:
        return self.params

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
        )

    def byte_hash(self) -> str:
        """Order-independent digest of every parameter and buffer."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].data.tobytes())
        for name in sorted(self.buffers):
            h.update(name.encode())
            h.update(self.buffers[name].tobytes())
        return h.hexdigest()


def init_params(config: BackboneConfig, seed: int) -> ModelParams:
    """Fan-in scaled Gaussian init (relu gain on graph-conv mixes), zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}

    c = config.in_channels
    params["stem.gamma"] = Tensor(np.ones(c), requires_grad=True)
    params["stem.beta"] = Tensor(np.zeros(c), requires_grad=True)
    buffers["stem.running_mean"] = np.zeros(c)
    buffers["stem.running_var"] = np.ones(c)

    width_in = c
    k = config.temporal_kernel
    for si, width in enumerate(config.stage_widths):
        for bi in range(config.blocks_per_stage[si]):
            cin = width_in if bi == 0 else width
            w = rng.normal(0.0, np.sqrt(2.0 / cin), (cin, width))
            params[f"stage{si}.block{bi}.gcn.weight"] = Tensor(w, requires_grad=True)
            kern = rng.normal(0.0, np.sqrt(1.0 / k), (width, k))
            params[f"stage{si}.block{bi}.tcn.kernel"] = Tensor(kern, requires_grad=True)
            params[f"stage{si}.block{bi}.bn.gamma"] = Tensor(np.ones(width), requires_grad=True)
            params[f"stage{si}.block{bi}.bn.beta"] = Tensor(np.zeros(width), requires_grad=True)
            buffers[f"stage{si}.block{bi}.bn.running_mean"] = np.zeros(width)
            buffers[f"stage{si}.block{bi}.bn.running_var"] = np.ones(width)
        width_in = width

    d = config.feature_dim
    params["head.weight"] = Tensor(
        rng.normal(0.0, np.sqrt(1.0 / d), (d, config.class_count)), requires_grad=True
    )
    params["head.bias"] = Tensor(np.zeros((1, config.class_count)), requires_grad=True)
    return ModelParams(config=config, params=params, buffers=buffers)


def gcn_unit_forward(x: Tensor, adjacency: np.ndarray, weight: Tensor) -> Tensor:
    """Per-frame graph convolution: relu(A_hat @ X_t @ W) at every frame.

    x: (batch, person, frame, joint, channel_in); weight: (channel_in, channel_out).
    """
    if x.data.ndim != 5:
        raise DimensionError(f"gcn unit expects rank-5 input, got {x.shape}")
    b, m, t, v, cin = x.shape
    if adjacency.shape != (v, v):
        raise DimensionError(f"adjacency {adjacency.shape} vs {v} joints")
    if weight.shape[0] != cin:
        raise DimensionError(f"gcn weight {weight.shape} vs {cin} input channels")

    adj = Tensor(adjacency)
    # joints mix: fold every other axis into columns of a (V, B*M*T*C) matrix
    xv = tz.reshape(tz.transpose(x, (3, 0, 1, 2, 4)), (v, b * m * t * cin))
    mixed = tz.matmul(adj, xv)
    back = tz.transpose(tz.reshape(mixed, (v, b, m, t, cin)), (1, 2, 3, 0, 4))
    # channel mix per (sample, person, frame, joint)
    flat = tz.reshape(back, (b * m * t * v, cin))
    out = tz.reshape(tz.matmul(flat, weight), (b, m, t, v, weight.shape[1]))
    return tz.relu(out)


def tcn_unit_forward(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Depthwise same-padded temporal convolution; frames shrink by ceil(T/stride)."""
    if stride not in (1, 2):
        raise ConfigError(f"temporal stride must be 1 or 2, got {stride}")
    return tz.temporal_conv(x, kernel, stride)


@dataclass
class ModelOutputs:
    """Feature vector(s) and squashed per-class activation map(s)."""

    feature: Tensor  # (batch, feature_dim)
    catmap: Tensor   # (batch, class_count)
    logits: Tensor   # (batch, class_count)


def forward_batch(
    x: np.ndarray,
    model: ModelParams,
    adjacency: np.ndarray,
    train: bool = False,
) -> ModelOutputs:
    """Run a (batch, person, frame, joint, channel) array through the backbone.

    In train mode the stem normalizes with batch statistics and updates the
    running buffers; in eval mode it uses the stored running statistics and
    records nothing on any tape.
    """
    cfg = model.config
    if x.ndim != 5:
        raise DimensionError(f"forward_batch expects rank-5 input, got {x.shape}")
    if x.shape[4] != cfg.in_channels:
        raise DimensionError(f"input has {x.shape[4]} channels, config {cfg.in_channels}")

    if train:
        return _forward_core(x, model, adjacency, train=True)
    with tz.no_tape():
        return _forward_core(x, model, adjacency, train=False)


def _bn_layer(h: Tensor, model: ModelParams, name: str, train: bool) -> Tensor:
    """Channel normalization; train mode folds batch stats into the buffers."""
    gamma = model.params[f"{name}.gamma"]
    beta = model.params[f"{name}.beta"]
    if train:
        data = h.data
        axes = tuple(range(data.ndim - 1))
        mu = data.mean(axis=axes)
        var = data.var(axis=axes)
        model.buffers[f"{name}.running_mean"] = (
            BN_MOMENTUM * model.buffers[f"{name}.running_mean"] + (1 - BN_MOMENTUM) * mu
        )
        model.buffers[f"{name}.running_var"] = (
            BN_MOMENTUM * model.buffers[f"{name}.running_var"] + (1 - BN_MOMENTUM) * var
        )
        return tz.batch_norm_train(h, gamma, beta, eps=BN_EPS)
    return Tensor(
        tz.batch_norm_eval(
            h.data,
            gamma.data,
            beta.data,
            model.buffers[f"{name}.running_mean"],
            model.buffers[f"{name}.running_var"],
            eps=BN_EPS,
        )
    )


def _forward_core(x: np.ndarray, model: ModelParams, adjacency: np.ndarray, train: bool) -> ModelOutputs:
    cfg = model.config
    p = model.params
    h = _bn_layer(Tensor(x), model, "stem", train)

    for si in range(len(cfg.stage_widths)):
        for bi in range(cfg.blocks_per_stage[si]):
            h = gcn_unit_forward(h, adjacency, p[f"stage{si}.block{bi}.gcn.weight"])
            stride = cfg.temporal_strides[si] if bi == 0 else 1
            h = tcn_unit_forward(h, p[f"stage{si}.block{bi}.tcn.kernel"], stride)
            h = _bn_layer(h, model, f"stage{si}.block{bi}.bn", train)

    feature = tz.mean_axes(h, (1, 2, 3))  # pool person, frame, joint
    logits = tz.broadcast_add_row(tz.matmul(feature, p["head.weight"]), p["head.bias"])
    catmap = tz.sigmoid(logits) if cfg.squash == "sigmoid" else tz.softmax_rows(logits)
    return ModelOutputs(feature=feature, catmap=catmap, logits=logits)


def forward_sequence(seq_data: np.ndarray, model: ModelParams, adjacency: np.ndarray) -> ModelOutputs:
    """Eval-mode forward of a single (person, frame, joint, channel) clip."""
    return forward_batch(seq_data[None], model, adjacency, train=False)


def classify(catmap: np.ndarray) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class index."""
    arr = np.asarray(catmap)
    if arr.ndim == 1:
        arr = arr[None]
    return arr.argmax(axis=1)
