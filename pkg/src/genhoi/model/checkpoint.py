"""Self-describing checkpoint container.

Layout: magic ``b"GHCK"``, header length as little-endian uint64, a UTF-8 JSON
header ``{config, config_hash, label_space, tensors: {name: {shape, offset,
nbytes}}, ...}`` and then the raw little-endian float32 payloads. Offsets are
relative to the start of the payload section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from genhoi.config import RunConfig, config_hash
from genhoi.errors import CheckpointError
from genhoi.label_space import LabelSpace, label_space_from_dict
from genhoi.model.gen import GEN, build_model
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

MAGIC = b"GHCK"
_LENGTH = struct.Struct("<Q")


def save_checkpoint(
    model: GEN,
    config: RunConfig,
    ls: LabelSpace,
    path: Path,
    *,
    extra: dict[str, Any] | None = None,
) -> None:
    tensors: dict[str, dict[str, Any]] = {}
    payloads: list[bytes] = []
    offset = 0
    for name, tensor in model.state_dict().items():
        data = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4").tobytes()
        tensors[name] = {"shape": list(tensor.shape), "offset": offset, "nbytes": len(data)}
        payloads.append(data)
        offset += len(data)
    header = {
        "config": config.model_dump(mode="json"),
        "config_hash": config_hash(config),
        "label_space": ls.to_dict(),
        "tensors": tensors,
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(blob)))
        f.write(blob)
        for data in payloads:
            f.write(data)
    tmp.replace(path)
    logger.debug("Saved checkpoint %s (%d tensors, %d bytes)", path, len(tensors), offset)


def read_checkpoint(path: Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Parse a checkpoint into its header and float32 arrays.

    Raises:
        CheckpointError: On bad magic, a truncated file or inconsistent tensor entries.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    prefix = len(MAGIC) + _LENGTH.size
    if len(data) < prefix or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a genhoi checkpoint")
    (length,) = _LENGTH.unpack_from(data, len(MAGIC))
    if len(data) < prefix + length:
        raise CheckpointError(f"{path} is truncated inside its header")
    try:
        header = json.loads(data[prefix : prefix + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header: {e}") from e
    base = prefix + length
    arrays: dict[str, np.ndarray] = {}
    for name, entry in header.get("tensors", {}).items():
        shape = tuple(int(s) for s in entry["shape"])
        start, nbytes = base + int(entry["offset"]), int(entry["nbytes"])
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)) or start + nbytes > len(data):
            raise CheckpointError(f"{path}: tensor {name!r} entry does not fit the payload")
        arrays[name] = (
            np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=start)
            .reshape(shape)
            .astype(np.float32)
        )
    return header, arrays


def load_checkpoint(path: Path) -> tuple[GEN, RunConfig, LabelSpace, dict[str, Any]]:
    """Rebuild the model stored in ``path`` in evaluation mode."""
    header, arrays = read_checkpoint(path)
    try:
        config = RunConfig.model_validate(header["config"])
        ls = label_space_from_dict(header["label_space"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: cannot rebuild config or label space: {e}") from e
    model = build_model(config, ls, provider=None)
    state = model.state_dict()
    missing = set(state) - set(arrays)
    unexpected = set(arrays) - set(state)
    if missing or unexpected:
        raise CheckpointError(
            f"{path} does not match the model: missing {sorted(missing)}, "
            f"unexpected {sorted(unexpected)}"
        )
    for name, array in arrays.items():
        if tuple(state[name].shape) != array.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {array.shape}, model expects {tuple(state[name].shape)}"
            )
        state[name] = torch.from_numpy(array).to(state[name].dtype)
    model.load_state_dict(state)
    model.eval()
    return model, config, ls, header
