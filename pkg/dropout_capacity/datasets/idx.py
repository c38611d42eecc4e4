"""IDX binary reader for MNIST-format image and label files.

An IDX file starts with a big-endian 32-bit magic (two zero bytes, data type
0x08 for unsigned bytes, number of dimensions), one big-endian 32-bit size per
dimension, then the payload in row-major order. Files ending in .gz are
decompressed transparently.
"""
from __future__ import annotations

import gzip
import logging
import math
import struct
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from ..const import (
    DEFAULT_CLASSES,
    IDX_MAGIC_IMAGES,
    IDX_MAGIC_LABELS,
    IDX_PIXEL_SCALE,
)
from ..exceptions import ParseError
from ..relunet import LabeledSet

_LOGGER = logging.getLogger(__name__)

IdxKind = Literal["images", "labels"]

_EXPECTED_MAGIC: dict[str, int] = {
    "images": IDX_MAGIC_IMAGES,
    "labels": IDX_MAGIC_LABELS,
}
_HEADER = struct.Struct(">I")
_MNIST_SIDE = 28


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as handle:
                return handle.read()
        return path.read_bytes()
    except (OSError, EOFError) as err:
        _LOGGER.error("Cannot read IDX file %s: %s", path, err)
        raise ParseError(f"cannot read {path}: {err}") from err


def parse_idx_bytes(data: bytes, kind: IdxKind | None = None) -> NDArray[np.uint8]:
    """Decode an IDX payload of unsigned bytes.

    Args:
        data: Raw file contents.
        kind: Require the image (3-dim) or label (1-dim) magic; None accepts
            either.

    Raises:
        ParseError: Bad magic, short header or truncated payload.
    """
    if len(data) < _HEADER.size:
        raise ParseError(f"file too short for IDX magic: {len(data)} bytes")
    (magic,) = _HEADER.unpack_from(data, 0)
    allowed = (_EXPECTED_MAGIC[kind],) if kind else tuple(_EXPECTED_MAGIC.values())
    if magic not in allowed:
        raise ParseError(f"bad IDX magic 0x{magic:08x}")

    ndim = magic & 0xFF
    header_size = _HEADER.size * (1 + ndim)
    if len(data) < header_size:
        raise ParseError(f"IDX header truncated: need {header_size} bytes, got {len(data)}")
    dims = struct.unpack_from(f">{ndim}I", data, _HEADER.size)
    count = math.prod(dims)
    payload = len(data) - header_size
    if payload < count:
        raise ParseError(f"IDX payload truncated: expected {count} bytes, got {payload}")
    if payload > count:
        _LOGGER.warning("Ignoring %d trailing bytes after IDX payload", payload - count)

    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header_size).reshape(dims).copy()


def parse_idx(path: str | Path, kind: IdxKind | None = None) -> NDArray[np.uint8]:
    """Read an IDX file (optionally gzip-compressed) into a uint8 array."""
    return parse_idx_bytes(_read_bytes(path), kind)


def load_binary_pair(
    images_path: str | Path,
    labels_path: str | Path,
    class_a: int = DEFAULT_CLASSES[0],
    class_b: int = DEFAULT_CLASSES[1],
) -> LabeledSet:
    """Extract two classes as a ±1 labeled set.

    Pixels are scaled to [0, 1] and each image is flattened into one input
    column; class_a maps to -1, class_b to +1 and other labels are dropped.
    """
    if class_a == class_b:
        raise ParseError(f"classes must differ, got {class_a} twice")
    images = parse_idx(images_path, "images")
    labels = parse_idx(labels_path, "labels")
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[1:] != (_MNIST_SIDE, _MNIST_SIDE):
        _LOGGER.warning("Images are %s, not %dx%d", images.shape[1:], _MNIST_SIDE, _MNIST_SIDE)

    keep = (labels == class_a) | (labels == class_b)
    if not np.any(keep):
        _LOGGER.warning("No examples of classes %d and %d in %s", class_a, class_b, labels_path)
    pixels = images.reshape(images.shape[0], -1)[keep].astype(np.float64) / IDX_PIXEL_SCALE
    targets = np.where(labels[keep] == class_a, -1.0, 1.0)
    _LOGGER.debug("Loaded %d examples of classes %d/%d", targets.size, class_a, class_b)
    return LabeledSet(pixels.T, targets)
