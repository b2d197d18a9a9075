"""Dataset file format: round trips, determinism, corruption handling."""

import struct

import numpy as np
import pytest

from acfl.dataio import HEADER_BYTES, MAGIC, load_dataset, save_dataset
from acfl.datagen import default_generator_spec, generate_dataset
from acfl.errors import FormatError, FormError
from acfl.skeleton import Form, derive_bone, default_topology
from acfl.datagen import Dataset


@pytest.fixture(scope="module")
def small_split():
    spec = default_generator_spec(4)
    return generate_dataset(spec, seed=3, samples_per_class=5)


def test_round_trip_preserves_payload_bytes(tmp_path, small_split):
    train, _ = small_split
    p1, p2 = tmp_path / "a.ds", tmp_path / "b.ds"
    save_dataset(train, str(p1))
    loaded = load_dataset(str(p1))
    save_dataset(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_preserves_values_to_float32(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "t.ds"
    save_dataset(train, str(path))
    loaded = load_dataset(str(path))
    assert len(loaded) == len(train)
    assert loaded.class_count == train.class_count
    for a, b in zip(train.samples, loaded.samples):
        assert a.label == b.label
        assert np.array_equal(b.data, a.data.astype(np.float32).astype(np.float64))


def test_same_seed_writes_identical_files(tmp_path):
    spec = default_generator_spec(3)
    for name in ("x.ds", "y.ds"):
        train, _ = generate_dataset(spec, seed=11, samples_per_class=4)
        save_dataset(train, str(tmp_path / name))
    assert (tmp_path / "x.ds").read_bytes() == (tmp_path / "y.ds").read_bytes()


def test_header_is_64_bytes_and_starts_with_magic(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "h.ds"
    save_dataset(train, str(path))
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    m, t, v, c = train.sample_shape
    fields = struct.unpack_from("<7I", blob, 8)
    assert fields == (1, m, t, v, c, train.class_count, len(train))
    assert blob[8 + 28 : HEADER_BYTES] == b"\x00" * (HEADER_BYTES - 36)


def test_bad_magic_rejected(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "bad.ds"
    save_dataset(train, str(path))
    blob = bytearray(path.read_bytes())
    blob[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        load_dataset(str(path))


def test_bad_version_rejected(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "ver.ds"
    save_dataset(train, str(path))
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8, 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_dataset(str(path))


def test_truncated_payload_rejected(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "trunc.ds"
    save_dataset(train, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(FormatError, match="truncated"):
        load_dataset(str(path))


def test_corrupted_class_count_rejected(tmp_path, small_split):
    """Class count smaller than some stored label must fail loudly."""
    train, _ = small_split
    path = tmp_path / "nfield.ds"
    save_dataset(train, str(path))
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8 + 5 * 4, 1)  # class_count field
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="label"):
        load_dataset(str(path))


def test_non_joint_dataset_refused(tmp_path, small_split):
    train, _ = small_split
    topo = default_topology()
    bones = Dataset(
        samples=[derive_bone(s, topo) for s in train.samples],
        class_count=train.class_count,
        split="train",
    )
    with pytest.raises(FormError):
        save_dataset(bones, str(tmp_path / "bone.ds"))


def test_split_inferred_from_filename(tmp_path, small_split):
    train, _ = small_split
    path = tmp_path / "train.ds"
    save_dataset(train, str(path))
    assert load_dataset(str(path)).split == "train"


def test_missing_file_is_format_error():
    with pytest.raises(FormatError):
        load_dataset("/nonexistent/nowhere.ds")
