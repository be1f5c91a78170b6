"""Tests for dataset split files."""

import struct

import numpy as np
import pytest

from loasp.harness._dataset_io import MAGIC, decode_dataset, encode_dataset, read_dataset, write_dataset
from loasp.harness.synthetic import build_dataset
from loasp.types.data import LesionInventory, SyntheticSample
from loasp.types.errors import CheckpointFormatError, ShapeError


@pytest.fixture
def samples():
    return build_dataset("C", "test", 3, 7, size=16)


def test_file_round_trip(tmp_path, samples):
    """Written splits read back bit-exact with labels and provenance."""
    path = write_dataset(samples, tmp_path / "data" / "C_test.bin")
    restored = read_dataset(path)
    assert len(restored) == 3
    for original, loaded in zip(samples, restored):
        assert loaded.image.tobytes() == original.image.tobytes()
        assert loaded.grade == original.grade
        assert loaded.inventory == original.inventory
        assert (loaded.domain_id, loaded.seed_index) == ("C", original.seed_index)


def test_empty_split():
    """An empty list encodes to a header only."""
    blob = encode_dataset([])
    assert blob.startswith(MAGIC)
    assert decode_dataset(blob) == []


def test_bad_magic(samples):
    """Foreign files are rejected."""
    with pytest.raises(CheckpointFormatError, match="bad magic"):
        decode_dataset(b"PNG" + encode_dataset(samples))


@pytest.mark.parametrize("cut", [10, 40, 200])
def test_truncated(samples, cut):
    """Any cut inside the header, a record or the pixels is detected."""
    blob = encode_dataset(samples)
    with pytest.raises(CheckpointFormatError):
        decode_dataset(blob[: len(MAGIC) + cut])


def test_mixed_shapes():
    """All images of a split share one shape."""
    def sample(size):
        return SyntheticSample(
            image=np.zeros((3, size, size)), grade=0, inventory=LesionInventory(), domain_id="A", seed_index=0
        )

    with pytest.raises(ShapeError):
        encode_dataset([sample(8), sample(16)])


# MAGIC, the 4 × u32 header, then the first record's u32 domain id length
FIRST_DOMAIN_ID = len(MAGIC) + 16 + 4


def test_domain_id_not_utf8(samples):
    """A corrupt domain id is a format error."""
    blob = bytearray(encode_dataset(samples))
    blob[FIRST_DOMAIN_ID] = 0xFF
    with pytest.raises(CheckpointFormatError, match="not UTF-8"):
        decode_dataset(bytes(blob))


def test_grade_out_of_range(samples):
    """A stored grade outside 0..4 fails validation as a format error."""
    blob = bytearray(encode_dataset(samples))
    # one-byte domain id "C", then the u64 seed index
    struct.pack_into("<I", blob, FIRST_DOMAIN_ID + 1 + 8, 9)
    with pytest.raises(CheckpointFormatError, match="invalid sample record"):
        decode_dataset(bytes(blob))
