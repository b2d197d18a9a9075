"""Binary dataset files.

Layout (little-endian throughout):

    bytes 0..7    magic "ACFLDS01"
    bytes 8..35   seven u32 fields: version, persons, frames, joints,
                  channels, class_count, sample_count
    bytes 36..63  zero padding (header is a fixed 64 bytes)
    then per sample: u32 label followed by persons*frames*joints*channels
    float32 values in row-major order

Files always hold joint-form sequences; derived forms are computed in memory.
Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .datagen import Dataset
from .errors import FormatError, FormError, ValidationError
from .skeleton import Form, SkeletonSequence

MAGIC = b"ACFLDS01"
VERSION = 1
HEADER_BYTES = 64
_HEADER_FIELDS = struct.Struct("<7I")


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path: str) -> None:
    """Serialize a joint-form dataset; payload floats narrow to 32-bit."""
    if dataset.form is not Form.JOINT:
        raise FormError(f"dataset files hold joint-form data, got {dataset.form.value}")
    m, t, v, c = dataset.sample_shape
    chunks = [MAGIC]
    chunks.append(
        _HEADER_FIELDS.pack(VERSION, m, t, v, c, dataset.class_count, len(dataset))
    )
    chunks.append(b"\x00" * (HEADER_BYTES - len(MAGIC) - _HEADER_FIELDS.size))
    for sample in dataset.samples:
        chunks.append(struct.pack("<I", sample.label))
        chunks.append(np.ascontiguousarray(sample.data, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(chunks))


def load_dataset(path: str, split: str | None = None) -> Dataset:
    """Read a dataset file back; sequences come out tagged as joint form."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read dataset file {path}: {exc}") from exc

    if len(blob) < HEADER_BYTES:
        raise FormatError(f"dataset header truncated: {len(blob)} bytes < {HEADER_BYTES}")
    if blob[:8] != MAGIC:
        raise FormatError(f"bad dataset magic {blob[:8]!r}")
    version, m, t, v, c, class_count, count = _HEADER_FIELDS.unpack(
        blob[8 : 8 + _HEADER_FIELDS.size]
    )
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    for name, value in (("persons", m), ("frames", t), ("joints", v),
                        ("channels", c), ("class_count", class_count),
                        ("sample_count", count)):
        if value < 1:
            raise FormatError(f"dataset field {name} must be positive, got {value}")

    values_per_sample = m * t * v * c
    record = 4 + 4 * values_per_sample
    expected = HEADER_BYTES + count * record
    if len(blob) != expected:
        raise FormatError(
            f"dataset payload truncated or padded: {len(blob)} bytes, expected {expected}"
        )

    samples: list[SkeletonSequence] = []
    offset = HEADER_BYTES
    for i in range(count):
        (label,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if label >= class_count:
            raise FormatError(
                f"sample {i} label {label} inconsistent with class_count {class_count}"
            )
        flat = np.frombuffer(blob, dtype="<f4", count=values_per_sample, offset=offset)
        offset += 4 * values_per_sample
        data = flat.astype(np.float64).reshape(m, t, v, c)
        samples.append(SkeletonSequence(data=data, label=int(label), form=Form.JOINT))

    if split is None:
        stem = os.path.splitext(os.path.basename(path))[0]
        split = stem if stem in ("train", "test") else "unknown"
    return Dataset(samples=samples, class_count=class_count, split=split)
