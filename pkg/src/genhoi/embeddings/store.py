"""EMB1 embedding-matrix files.

Layout: magic ``b"EMB1"``, rows and cols as little-endian uint64, then
row-major little-endian float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from genhoi.errors import EmbeddingFileError
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sQQ")
NORM_TOLERANCE = 1e-3


def save_embedding_matrix(matrix: np.ndarray, path: Path) -> None:
    array = np.asarray(matrix)
    if array.ndim != 2:
        raise EmbeddingFileError(f"Expected a 2-D matrix, got shape {array.shape}", str(path))
    if not np.all(np.isfinite(array)):
        raise EmbeddingFileError("Refusing to write non-finite embeddings", str(path))
    rows, cols = array.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, rows, cols))
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes(order="C"))


def load_embedding_matrix(path: Path, *, normalize: bool = False) -> np.ndarray:
    """Read an EMB1 file as a float32 matrix.

    With ``normalize=True`` every row is rescaled to unit norm when any row norm
    deviates from 1 by more than 1e-3, and a warning is logged.

    Raises:
        EmbeddingFileError: On bad magic, size mismatch or non-finite values.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise EmbeddingFileError(f"Cannot read {path}: {e}", str(path)) from e
    if len(data) < _HEADER.size:
        raise EmbeddingFileError(f"{path} is truncated: no complete header", str(path))
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EmbeddingFileError(f"{path} has magic {magic!r}, expected {MAGIC!r}", str(path))
    expected = _HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise EmbeddingFileError(
            f"{path} holds {len(data)} bytes, header implies {expected} ({rows}x{cols})",
            str(path),
        )
    matrix = (
        np.frombuffer(data, dtype="<f4", count=rows * cols, offset=_HEADER.size)
        .reshape(rows, cols)
        .astype(np.float32)
    )
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingFileError(f"{path} contains non-finite values", str(path))
    if normalize:
        matrix = normalize_rows(matrix, source=str(path))
    return matrix


def normalize_rows(matrix: np.ndarray, *, source: str = "matrix") -> np.ndarray:
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(norms == 0):
        raise EmbeddingFileError(f"{source} has zero-norm rows", source)
    deviation = float(np.max(np.abs(norms - 1.0))) if len(norms) else 0.0
    if deviation > NORM_TOLERANCE:
        logger.warning(
            "Renormalizing embedding rows of %s (max norm deviation %.4g)", source, deviation
        )
        return (matrix / norms[:, None]).astype(np.float32)
    return matrix
