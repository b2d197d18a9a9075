"""Skeleton topology, per-sample sequences, form derivation, and resampling.

A sequence holds one clip as a (person, frame, joint, channel) float64 array.
Three forms of the same clip exist: joint coordinates, bone vectors (joint
minus its parent, zero at the root), and the hybrid channel concatenation of
the two.  Forms derived from one clip stay row-aligned sample for sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionError, FormError, ValidationError


class Form(str, Enum):
    JOINT = "joint"
    BONE = "bone"
    HYBRID = "hybrid"


FORMS: tuple[Form, ...] = (Form.JOINT, Form.BONE, Form.HYBRID)


@dataclass(frozen=True)
class SkeletonTopology:
    """Rooted tree over joints; parent[v] == v marks the root."""

    parent: tuple[int, ...]

    def __post_init__(self):
        v = len(self.parent)
        if v == 0:
            raise ValidationError("topology needs at least one joint")
        roots = [i for i, p in enumerate(self.parent) if p == i]
        if len(roots) != 1:
            raise ValidationError(f"topology must have exactly one root, found {roots}")
        for i, p in enumerate(self.parent):
            if not 0 <= p < v:
                raise ValidationError(f"parent index {p} of joint {i} out of range")
            seen = {i}
            node = i
            while self.parent[node] != node:
                node = self.parent[node]
                if node in seen:
                    raise ValidationError(f"topology has a cycle through joint {i}")
                seen.add(node)

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return next(i for i, p in enumerate(self.parent) if p == i)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((p, i) for i, p in enumerate(self.parent) if p != i)


def default_topology() -> SkeletonTopology:
    """Nine-joint stick figure: pelvis root, spine/head, two articulated arms,
    two single-segment legs."""
    # 0 pelvis, 1 spine, 2 head, 3 l_elbow, 4 l_hand, 5 r_elbow, 6 r_hand,
    # 7 l_foot, 8 r_foot
    return SkeletonTopology(parent=(0, 0, 1, 1, 3, 1, 5, 0, 0))


def chain_topology(joint_count: int) -> SkeletonTopology:
    """Simple path graph, handy for small test skeletons."""
    if joint_count < 1:
        raise ValidationError("chain topology needs at least one joint")
    return SkeletonTopology(parent=tuple(max(0, i - 1) for i in range(joint_count)))


@dataclass
class SkeletonSequence:
    """One clip in one form: data laid out (person, frame, joint, channel)."""

    data: np.ndarray
    label: int
    form: Form = Form.JOINT

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise DimensionError(f"sequence data must be rank 4, got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DimensionError(f"sequence axes must be positive, got {self.data.shape}")
        if self.label < 0:
            raise ValidationError(f"label must be nonnegative, got {self.label}")

    @property
    def persons(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def joints(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


def derive_bone(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Bone form: each joint's offset from its parent; the root bone is zero."""
    if seq.form is not Form.JOINT:
        raise FormError(f"bone form derives from joint form, got {seq.form.value}")
    if seq.joints != topology.joint_count:
        raise DimensionError(
            f"sequence has {seq.joints} joints, topology {topology.joint_count}"
        )
    parent = np.asarray(topology.parent, dtype=np.intp)
    bone = seq.data - seq.data[:, :, parent, :]
    return SkeletonSequence(data=bone, label=seq.label, form=Form.BONE)


def derive_hybrid(joint_seq: SkeletonSequence, bone_seq: SkeletonSequence) -> SkeletonSequence:
    """Hybrid form: joint channels first, bone channels appended."""
    if joint_seq.form is not Form.JOINT or bone_seq.form is not Form.BONE:
        raise FormError(
            f"hybrid needs joint+bone inputs, got {joint_seq.form.value}+{bone_seq.form.value}"
        )
    if joint_seq.data.shape != bone_seq.data.shape:
        raise DimensionError(
            f"joint/bone shapes differ: {joint_seq.data.shape} vs {bone_seq.data.shape}"
        )
    if joint_seq.label != bone_seq.label:
        raise ValidationError("hybrid inputs must describe the same clip")
    return SkeletonSequence(
        data=np.concatenate([joint_seq.data, bone_seq.data], axis=3),
        label=joint_seq.label,
        form=Form.HYBRID,
    )


def resample_frames(seq: SkeletonSequence, frames_out: int) -> SkeletonSequence:
    """Linear interpolation along the frame axis, endpoints preserved exactly."""
    if frames_out < 1:
        raise ValidationError(f"frames_out must be >= 1, got {frames_out}")
    t = seq.frames
    if frames_out == t:
        return SkeletonSequence(data=seq.data.copy(), label=seq.label, form=seq.form)
    if t == 1:
        data = np.repeat(seq.data, frames_out, axis=1)
        return SkeletonSequence(data=data, label=seq.label, form=seq.form)
    if frames_out == 1:
        positions = np.array([0.0])
    else:
        positions = np.linspace(0.0, t - 1.0, frames_out)
    lo = np.floor(positions).astype(np.intp)
    lo = np.minimum(lo, t - 2)
    w = positions - lo
    left = seq.data[:, lo, :, :]
    right = seq.data[:, lo + 1, :, :]
    wcol = w[None, :, None, None]
    data = (1.0 - wcol) * left + wcol * right
    return SkeletonSequence(data=data, label=seq.label, form=seq.form)
