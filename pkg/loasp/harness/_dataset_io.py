"""Dataset split files.

Layout: ``LODG1\\n``, then u32 count, C, H, W, then per sample::

    u32 domain id length | UTF-8 domain id | u64 seed index | u32 grade |
    u32 * 5 lesion counts | float64 LE image (C * H * W)
"""

import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from pydantic import ValidationError

from loasp.types.data import LesionInventory, SyntheticSample
from loasp.types.errors import CheckpointFormatError, ShapeError

MAGIC = b"LODG1\n"
_HEADER = struct.Struct("<4I")
_U32 = struct.Struct("<I")
_RECORD = struct.Struct("<QI5I")


def encode_dataset(samples: Sequence[SyntheticSample]) -> bytes:
    if samples:
        shape = samples[0].image.shape
    else:
        shape = (3, 0, 0)
    parts = [MAGIC, _HEADER.pack(len(samples), *shape)]
    for sample in samples:
        if sample.image.shape != shape:
            raise ShapeError("all images in a split must share one shape", [sample.image.shape, shape])
        name = sample.domain_id.encode("utf-8")
        parts.append(_U32.pack(len(name)))
        parts.append(name)
        parts.append(_RECORD.pack(sample.seed_index, sample.grade, *sample.inventory.as_tuple()))
        parts.append(np.ascontiguousarray(sample.image, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_dataset(blob: bytes) -> List[SyntheticSample]:
    """Parse a split written by ``encode_dataset``.

    Raises:
        CheckpointFormatError: On a wrong magic, truncation, a domain id that is
            not UTF-8 or a record that fails sample validation.
    """
    if not blob.startswith(MAGIC):
        raise CheckpointFormatError("not a loasp dataset file (bad magic)")
    offset = len(MAGIC)
    try:
        count, c, h, w = _HEADER.unpack_from(blob, offset)
        offset += _HEADER.size
        pixels = c * h * w
        samples = []
        for _ in range(count):
            (name_len,) = _U32.unpack_from(blob, offset)
            offset += _U32.size
            domain_id = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            seed_index, grade, *counts = _RECORD.unpack_from(blob, offset)
            offset += _RECORD.size
            if offset + 8 * pixels > len(blob):
                raise CheckpointFormatError(f"dataset truncated at byte {offset}")
            image = np.frombuffer(blob, dtype="<f8", count=pixels, offset=offset).reshape(c, h, w)
            offset += 8 * pixels
            samples.append(
                SyntheticSample(
                    image=image.astype(np.float64),
                    grade=grade,
                    inventory=LesionInventory(
                        microaneurysm_count=counts[0],
                        hemorrhage_count=counts[1],
                        hard_exudate_count=counts[2],
                        soft_exudate_count=counts[3],
                        neovascular_tangles=counts[4],
                    ),
                    domain_id=domain_id,
                    seed_index=seed_index,
                )
            )
    except struct.error as exc:
        raise CheckpointFormatError(f"dataset truncated: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"domain id before byte {offset} is not UTF-8") from exc
    except ValidationError as exc:
        raise CheckpointFormatError(
            f"invalid sample record before byte {offset}: {exc.error_count()} error(s)"
        ) from exc
    return samples


def write_dataset(samples: Sequence[SyntheticSample], path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_dataset(samples))
    return target


def read_dataset(path: Union[str, Path]) -> List[SyntheticSample]:
    return decode_dataset(Path(path).read_bytes())
