"""Versioned binary container for named float64 tensors.

Layout: magic ``CCKT``, format version (u16), then records until end of file. Each record is
the name length (u16), the UTF-8 name, the rank (u8), one u32 per dimension and the
little-endian float64 payload in C order. All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from ._errors import ModelFormatError
from ._logging import get_logger
from ._model import ChaosForecaster

LOGGER = get_logger(__name__)

MAGIC = b"CCKT"
FORMAT_VERSION = 1
_PAYLOAD = np.dtype("<f8")


def write_records(stream: BinaryIO, records: Mapping[str, np.ndarray]) -> None:
    """Write ``records`` in name order."""
    stream.write(MAGIC + struct.pack("<H", FORMAT_VERSION))
    for name in sorted(records):
        value = np.ascontiguousarray(records[name], dtype=_PAYLOAD)
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<H", len(encoded)) + encoded)
        stream.write(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        stream.write(value.tobytes())


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        msg = f"Truncated model file while reading {what}."
        raise ModelFormatError(msg)
    return data


def read_records(stream: BinaryIO) -> dict[str, np.ndarray]:
    """Read every record of a container.

    :raises ModelFormatError: on a bad magic, an unsupported version, truncation or a
        duplicated name.
    """
    header = stream.read(len(MAGIC) + 2)
    if header[: len(MAGIC)] != MAGIC:
        msg = "Not a chaoscast model file (bad magic)."
        raise ModelFormatError(msg)
    if len(header) != len(MAGIC) + 2:
        msg = "Truncated model file header."
        raise ModelFormatError(msg)
    (version,) = struct.unpack("<H", header[len(MAGIC) :])
    if version != FORMAT_VERSION:
        msg = f"Unsupported model file version {version} (expected {FORMAT_VERSION})."
        raise ModelFormatError(msg)
    records: dict[str, np.ndarray] = {}
    while True:
        prefix = stream.read(2)
        if not prefix:
            return records
        if len(prefix) != 2:  # noqa: PLR2004
            msg = "Truncated model file while reading a record name."
            raise ModelFormatError(msg)
        (length,) = struct.unpack("<H", prefix)
        try:
            name = _read_exact(stream, length, "a record name").decode("utf-8")
        except UnicodeDecodeError:
            msg = "Record name is not valid UTF-8."
            raise ModelFormatError(msg) from None
        (rank,) = struct.unpack("<B", _read_exact(stream, 1, f"the rank of '{name}'"))
        shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, f"the dims of '{name}'"))
        count = int(np.prod(shape, dtype=np.int64))
        payload = _read_exact(stream, count * _PAYLOAD.itemsize, f"the data of '{name}'")
        if name in records:
            msg = f"Duplicated record '{name}'."
            raise ModelFormatError(msg)
        records[name] = np.frombuffer(payload, dtype=_PAYLOAD).astype(np.float64).reshape(shape)


def save_model(model: ChaosForecaster, path: str | Path) -> None:
    path = Path(path)
    with path.open("wb") as f:
        write_records(f, model.state())
    LOGGER.info("Wrote model to %s", path)


def load_model(path: str | Path) -> ChaosForecaster:
    """Rebuild a forecaster from a container written by :func:`save_model`."""
    with Path(path).open("rb") as f:
        records = read_records(f)
    return ChaosForecaster.from_state(records)
