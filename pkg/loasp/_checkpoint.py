"""Binary checkpoint container.

Layout: the magic ``LOASP1\\n`` followed by one record per array::

    u32 name length | UTF-8 name | u32 rank | u32 extent * rank | float64 LE payload

All integers are little-endian. Arrays are written in row-major order, so a
save/load round trip is bit-exact.
"""

import logging
import math
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from loasp.types.errors import CheckpointFormatError

logger = logging.getLogger(__name__)

MAGIC = b"LOASP1\n"
_U32 = struct.Struct("<I")


def encode_checkpoint(state: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays; records keep the mapping's iteration order."""
    parts = [MAGIC]
    for name, value in state.items():
        array = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(array.ndim))
        parts.extend(_U32.pack(extent) for extent in array.shape)
        parts.append(array.tobytes(order="C"))
    return b"".join(parts)


def _decode_name(raw: bytes, offset: int) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"record name before byte {offset} is not UTF-8") from exc


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    """Parse a checkpoint produced by ``encode_checkpoint``.

    Raises:
        CheckpointFormatError: On a wrong magic, a truncated record, a name
            that is not UTF-8, extents larger than the remaining payload or a
            duplicated name.
    """
    if not blob.startswith(MAGIC):
        raise CheckpointFormatError("not a loasp checkpoint (bad magic)")
    offset = len(MAGIC)
    state: Dict[str, np.ndarray] = {}

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(blob):
            raise CheckpointFormatError(f"checkpoint truncated at byte {offset}")
        chunk = blob[offset : offset + count]
        offset += count
        return chunk

    while offset < len(blob):
        (name_len,) = _U32.unpack(take(4))
        name = _decode_name(take(name_len), offset)
        (rank,) = _U32.unpack(take(4))
        shape = tuple(_U32.unpack(take(4))[0] for _ in range(rank))
        count = math.prod(shape)
        if 8 * count > len(blob) - offset:
            raise CheckpointFormatError(
                f"checkpoint truncated: record '{name}' of shape {shape} needs {8 * count} bytes, "
                f"{len(blob) - offset} left"
            )
        payload = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        if name in state:
            raise CheckpointFormatError(f"duplicate record '{name}'")
        state[name] = payload.astype(np.float64)
    return state


def save_checkpoint(state: Mapping[str, np.ndarray], path: Union[str, Path]) -> Path:
    """Write ``state`` to ``path``, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_checkpoint(state))
    logger.debug("wrote %d arrays to %s", len(state), target)
    return target


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read a checkpoint file into a name → array mapping."""
    target = Path(path)
    if not target.is_file():
        raise CheckpointFormatError(f"checkpoint not found: {target}")
    return decode_checkpoint(target.read_bytes())
