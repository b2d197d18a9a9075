"""Synthetic desk-scale action clips with a controllable class signal.

Each class is a tuple of oscillation primitives (frequency, amplitude, phase)
assigned per joint group.  A sample renders those primitives at a random raw
frame count, adds per-sample whole-figure nuisance motion (linear drift plus a
sinusoidal wander that absolute joint coordinates see but bone vectors cancel)
and pointwise Gaussian noise, then resamples to the fixed output length.
Generation is a pure function of (spec, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .skeleton import (
    Form,
    SkeletonSequence,
    SkeletonTopology,
    default_topology,
    resample_frames,
)

DEFAULT_REST_POSE = np.array(
    [
        [0.0, 0.0],    # pelvis
        [0.0, 0.6],    # spine
        [0.0, 1.1],    # head
        [-0.45, 0.6],  # l_elbow
        [-0.9, 0.6],   # l_hand
        [0.45, 0.6],   # r_elbow
        [0.9, 0.6],    # r_hand
        [-0.3, -0.9],  # l_foot
        [0.3, -0.9],   # r_foot
    ]
)

DEFAULT_GROUPS: tuple[tuple[int, ...], ...] = ((0, 1, 2), (3, 4), (5, 6), (7, 8))

_FRAME_SECONDS = 1.0 / 24.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything needed to synthesize a dataset deterministically."""

    class_count: int
    motion: np.ndarray  # (class, group, 3): frequency, amplitude, phase
    topology: SkeletonTopology = field(default_factory=default_topology)
    rest_pose: np.ndarray = field(default_factory=lambda: DEFAULT_REST_POSE.copy())
    groups: tuple[tuple[int, ...], ...] = DEFAULT_GROUPS
    frames_out: int = 16
    raw_frame_range: tuple[int, int] = (20, 40)
    noise_sigma: float = 0.04
    drift_sigma: float = 0.35
    drift_velocity_sigma: float = 0.6
    wander_amp_range: tuple[float, float] = (0.0, 0.0)
    wander_freq_range: tuple[float, float] = (0.5, 2.8)
    freq_jitter: float = 0.15
    phase_jitter: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "motion", np.ascontiguousarray(self.motion, dtype=np.float64))
        object.__setattr__(
            self, "rest_pose", np.ascontiguousarray(self.rest_pose, dtype=np.float64)
        )
        if self.class_count < 2:
            raise ValidationError(f"need at least 2 classes, got {self.class_count}")
        if self.motion.shape != (self.class_count, len(self.groups), 3):
            raise ValidationError(
                f"motion table shape {self.motion.shape} does not match "
                f"{self.class_count} classes x {len(self.groups)} groups x 3"
            )
        v = self.topology.joint_count
        if self.rest_pose.shape != (v, 2):
            raise ValidationError(f"rest pose shape {self.rest_pose.shape}, expected ({v}, 2)")
        covered = sorted(j for g in self.groups for j in g)
        if covered != list(range(v)):
            raise ValidationError("joint groups must partition the joint set")
        lo, hi = self.raw_frame_range
        if not (1 <= lo <= hi):
            raise ValidationError(f"bad raw frame range {self.raw_frame_range}")
        if self.frames_out < 2:
            raise ValidationError("frames_out must be >= 2")
        if self.noise_sigma < 0 or self.drift_sigma < 0 or self.drift_velocity_sigma < 0:
            raise ValidationError("noise and drift scales must be nonnegative")
        alo, ahi = self.wander_amp_range
        flo, fhi = self.wander_freq_range
        if not (0.0 <= alo <= ahi):
            raise ValidationError(f"bad wander amplitude range {self.wander_amp_range}")
        if ahi > 0.0 and not (0.0 < flo <= fhi):
            raise ValidationError(f"bad wander frequency range {self.wander_freq_range}")
        if not 0.0 <= self.freq_jitter < 1.0:
            raise ValidationError(f"frequency jitter must lie in [0, 1), got {self.freq_jitter}")
        if not 0.0 <= self.phase_jitter <= math.pi:
            raise ValidationError(f"phase jitter must lie in [0, pi], got {self.phase_jitter}")
        rows = {tuple(np.round(self.motion[c].reshape(-1), 12)) for c in range(self.class_count)}
        if len(rows) != self.class_count:
            raise ValidationError("classes must have distinct motion parameter tuples")

    @property
    def joint_count(self) -> int:
        return self.topology.joint_count

    @property
    def channels(self) -> int:
        return 2


def default_generator_spec(class_count: int = 8, **overrides) -> GeneratorSpec:
    """Canonical spec: distinct per-class oscillations drawn from a fixed stream."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, class_count]))
    groups = overrides.pop("groups", DEFAULT_GROUPS)
    motion = np.stack(
        [
            np.stack(
                [
                    rng.uniform(0.6, 2.4, len(groups)),   # frequency (Hz)
                    rng.uniform(0.15, 0.5, len(groups)),  # amplitude
                    rng.uniform(0.0, 2 * math.pi, len(groups)),  # phase
                ],
                axis=1,
            )
            for _ in range(class_count)
        ]
    )
    return GeneratorSpec(class_count=class_count, motion=motion, groups=groups, **overrides)


@dataclass
class Dataset:
    """A homogeneous list of same-form sequences plus its provenance."""

    samples: list[SkeletonSequence]
    class_count: int
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        if not self.samples:
            raise ValidationError("dataset must hold at least one sample")
        shape = self.samples[0].data.shape
        form = self.samples[0].form
        for s in self.samples:
            if s.data.shape != shape:
                raise ValidationError(f"inhomogeneous sample shapes: {s.data.shape} vs {shape}")
            if s.form is not form:
                raise ValidationError("dataset mixes forms")
            if s.label >= self.class_count:
                raise ValidationError(
                    f"label {s.label} inconsistent with class count {self.class_count}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def form(self) -> Form:
        return self.samples[0].form

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.samples[0].data.shape

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """(count, person, frame, joint, channel) data plus label vector."""
        x = np.stack([s.data for s in self.samples])
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, y


def _rank_in_group(groups) -> dict[int, float]:
    rank = {}
    for g in groups:
        for pos, j in enumerate(g):
            rank[j] = float(pos)
    return rank


def _synthesize_clip(spec: GeneratorSpec, label: int, rng: np.random.Generator) -> SkeletonSequence:
    t_raw = int(rng.integers(spec.raw_frame_range[0], spec.raw_frame_range[1] + 1))
    v = spec.joint_count
    times = np.arange(t_raw) * _FRAME_SECONDS
    pos = np.broadcast_to(spec.rest_pose, (t_raw, v, 2)).copy()

    rank = _rank_in_group(spec.groups)
    for gi, group in enumerate(spec.groups):
        freq, amp, phase = spec.motion[label, gi]
        if spec.freq_jitter > 0.0:
            freq = freq * rng.uniform(1.0 - spec.freq_jitter, 1.0 + spec.freq_jitter)
        if spec.phase_jitter > 0.0:
            phase = phase + rng.uniform(-spec.phase_jitter, spec.phase_jitter)
        angle = 2.0 * math.pi * freq * times + phase
        for j in group:
            a = amp * (1.0 + 0.35 * rank[j])
            pos[:, j, 0] += a * np.sin(angle)
            pos[:, j, 1] += a * np.cos(angle)

    offset = rng.normal(0.0, spec.drift_sigma, 2)
    velocity = rng.normal(0.0, spec.drift_velocity_sigma, 2)
    pos += offset[None, None, :] + velocity[None, None, :] * times[:, None, None]
    if spec.wander_amp_range[1] > 0.0:
        # whole-figure oscillation: lands in the class frequency band, so absolute
        # coordinates see a confounding rhythm that bone differences cancel exactly
        w_amp = rng.uniform(*spec.wander_amp_range, 2)
        w_freq = rng.uniform(*spec.wander_freq_range, 2)
        w_phase = rng.uniform(0.0, 2.0 * math.pi, 2)
        wobble = w_amp * np.sin(2.0 * math.pi * w_freq * times[:, None] + w_phase)
        pos += wobble[:, None, :]
    pos += rng.normal(0.0, spec.noise_sigma, pos.shape)

    seq = SkeletonSequence(data=pos[None, :, :, :], label=label, form=Form.JOINT)
    return resample_frames(seq, spec.frames_out)


def generate_dataset(
    spec: GeneratorSpec,
    seed: int,
    samples_per_class: int,
    split_fraction: float = 0.75,
) -> tuple[Dataset, Dataset]:
    """Deterministic train/test datasets; every class appears in both splits."""
    if samples_per_class < 2:
        raise ValidationError("need at least 2 samples per class to split")
    if not 0.0 < split_fraction < 1.0:
        raise ValidationError(f"split fraction must lie in (0, 1), got {split_fraction}")
    n_train = int(round(samples_per_class * split_fraction))
    n_train = min(max(n_train, 1), samples_per_class - 1)

    train, test = [], []
    for label in range(spec.class_count):
        for idx in range(samples_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, idx]))
            clip = _synthesize_clip(spec, label, rng)
            (train if idx < n_train else test).append(clip)
    return (
        Dataset(samples=train, class_count=spec.class_count, split="train", seed=seed),
        Dataset(samples=test, class_count=spec.class_count, split="test", seed=seed),
    )


# ---------------------------------------------------------------------------
# per-channel standardization


def channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std over (sample, person, frame, joint)."""
    if x.ndim != 5:
        raise ValidationError(f"expected stacked rank-5 data, got {x.shape}")
    mean = x.mean(axis=(0, 1, 2, 3))
    std = x.std(axis=(0, 1, 2, 3))
    std = np.where(std < 1e-8, 1.0, std)
    return mean, std


def apply_channel_stats(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (x - mean) / std
