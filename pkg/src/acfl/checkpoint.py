"""Binary model checkpoints.

Layout (little-endian):

    bytes 0..7   magic "ACFLCK01"
    u32 version
    u32 record count, then that many records
    u32 optimizer record count, then that many records (momentum buffers)
    u32 beta record count, then that many records (one per channel, 1 x L)
    u32 metadata byte length, then that many bytes of UTF-8 JSON

A record is: u32 name length, name bytes (UTF-8), u32 rank, rank u32 dims,
then the row-major float32 payload.  Model records cover learnable parameters,
running buffers (name prefix "buffer."), and mimic-head projections (name
prefix "mimic.<channel>.").  Payloads narrow to float32 on disk, so a loaded
model round-trips to identical bytes.  Writes are atomic.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig, ModelParams
from .crossform import Channel, MimicHead
from .errors import FormatError
from .skeleton import Form
from .tensor import Tensor

MAGIC = b"ACFLCK01"
VERSION = 1


def _pack_record(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    dims = array.shape
    parts = [struct.pack("<I", len(encoded)), encoded, struct.pack("<I", len(dims))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
    parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(f"checkpoint truncated while reading {what}")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def record(self) -> tuple[str, np.ndarray]:
        name_len = self.u32("record name length")
        name = self.take(name_len, "record name").decode("utf-8")
        rank = self.u32(f"rank of {name}")
        if rank > 8:
            raise FormatError(f"record {name} has implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank, f"dims of {name}")) if rank else ()
        count = 1
        for d in dims:
            count *= d
        payload = self.take(4 * count, f"payload of {name}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
        return name, arr


@dataclass
class CheckpointBundle:
    """Everything a checkpoint stores, reassembled."""

    model: ModelParams
    heads: dict[Channel, MimicHead] = field(default_factory=dict)
    momenta: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


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


def save_checkpoint(
    path: str,
    model: ModelParams,
    heads: dict[Channel, MimicHead] | None = None,
    momenta: dict[str, np.ndarray] | None = None,
    metadata: dict | None = None,
) -> None:
    heads = heads or {}
    momenta = momenta or {}
    meta = dict(metadata or {})
    cfg = model.config
    meta["backbone"] = {
        "input_form": cfg.input_form.value,
        "in_channels": cfg.in_channels,
        "class_count": cfg.class_count,
        "stage_widths": list(cfg.stage_widths),
        "blocks_per_stage": list(cfg.blocks_per_stage),
        "temporal_kernel": cfg.temporal_kernel,
        "temporal_strides": list(cfg.temporal_strides),
        "squash": cfg.squash,
    }
    meta["head_channels"] = {
        ch.value: {"beta_enabled": h.beta_enabled, "beta_seeded": h.beta_seeded}
        for ch, h in heads.items()
    }

    records: list[bytes] = []
    for name, p in model.params.items():
        records.append(_pack_record(name, p.data))
    for name, b in model.buffers.items():
        records.append(_pack_record(f"buffer.{name}", b))
    for ch, head in heads.items():
        for part, tensor in head.trainables().items():
            records.append(_pack_record(f"mimic.{ch.value}.{part}", tensor.data))

    opt_records = [_pack_record(name, buf) for name, buf in momenta.items()]
    beta_records = [
        _pack_record(f"beta.{ch.value}", head.beta) for ch, head in heads.items()
    ]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(records))]
    chunks.extend(records)
    chunks.append(struct.pack("<I", len(opt_records)))
    chunks.extend(opt_records)
    chunks.append(struct.pack("<I", len(beta_records)))
    chunks.extend(beta_records)
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    _atomic_write(path, b"".join(chunks))


def load_checkpoint(path: str) -> CheckpointBundle:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc

    r = _Reader(blob)
    if r.take(8, "magic") != MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    model_records = {name: arr for name, arr in (r.record() for _ in range(r.u32("record count")))}
    momenta = {name: arr for name, arr in (r.record() for _ in range(r.u32("optimizer record count")))}
    betas = {name: arr for name, arr in (r.record() for _ in range(r.u32("beta record count")))}
    meta_len = r.u32("metadata length")
    try:
        metadata = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint metadata corrupt: {exc}") from exc
    if r.offset != len(blob):
        raise FormatError(f"checkpoint has {len(blob) - r.offset} trailing bytes")

    bb = metadata.get("backbone")
    if bb is None:
        raise FormatError("checkpoint metadata lacks the backbone description")
    config = BackboneConfig(
        input_form=Form(bb["input_form"]),
        in_channels=int(bb["in_channels"]),
        class_count=int(bb["class_count"]),
        stage_widths=tuple(bb["stage_widths"]),
        blocks_per_stage=tuple(bb["blocks_per_stage"]),
        temporal_kernel=int(bb["temporal_kernel"]),
        temporal_strides=tuple(bb["temporal_strides"]),
        squash=bb["squash"],
    )

    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    mimic_parts: dict[str, dict[str, np.ndarray]] = {}
    for name, arr in model_records.items():
        if name.startswith("buffer."):
            buffers[name[len("buffer.") :]] = arr
        elif name.startswith("mimic."):
            _, ch_name, part = name.split(".", 2)
            mimic_parts.setdefault(ch_name, {})[part] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)
    model = ModelParams(config=config, params=params, buffers=buffers)

    heads: dict[Channel, MimicHead] = {}
    head_meta = metadata.get("head_channels", {})
    for ch_name, parts in mimic_parts.items():
        beta = betas.get(f"beta.{ch_name}")
        if beta is None:
            raise FormatError(f"checkpoint lacks a beta snapshot for channel {ch_name}")
        flags = head_meta.get(ch_name, {})
        heads[Channel(ch_name)] = MimicHead(
            query_proj=Tensor(parts["query"], requires_grad=True),
            key_proj=Tensor(parts["key"], requires_grad=True),
            value_proj=Tensor(parts["value"], requires_grad=True),
            beta=beta,
            beta_enabled=bool(flags.get("beta_enabled", True)),
            beta_seeded=bool(flags.get("beta_seeded", False)),
        )
    return CheckpointBundle(model=model, heads=heads, momenta=momenta, metadata=metadata)
