"""
Versioned binary model container

Layout:
    8 bytes   magic
    u16       format version (little endian)
    u32       header length H
    H bytes   UTF-8 JSON header: config snapshot, CTDSV statistics, normalization
              counters, optional optimizer scalars, array table, payload CRC32
    payload   raw little-endian arrays, concatenated in table order
"""
import json
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from app.core.exceptions import CheckpointError, ConfigurationError

MAGIC = b"VSLCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")


def _array_table(arrays: Dict[str, np.ndarray]) -> Tuple[list, bytes]:
    table, chunks, offset = [], [], 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype=value.dtype.newbyteorder("<")).tobytes()
        table.append({
            "name": name,
            "dtype": value.dtype.newbyteorder("<").str,
            "shape": list(value.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)
    return table, b"".join(chunks)


def save_checkpoint(model, path: Path, optimizer=None) -> Path:
    """
    Write every parameter and buffer of `model`; optimizer moments only when given

    Returns:
        Path: the written file
    """
    path = Path(path)
    arrays = {f"param.{k}": v for k, v in model.parameters().items()}
    arrays.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    header: Dict[str, Any] = {
        "config": model.config.model_dump(mode="json"),
        "ctdsv_stats": model.ctdsv_stats.model_dump() if model.ctdsv_stats else None,
        "batches_tracked": {name: bn.stats.num_batches_tracked for name, bn in model.norm_layers().items()},
        "optimizer": None,
    }
    if optimizer is not None:
        header["optimizer"] = {
            "step": optimizer.step, "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps,
        }
        arrays.update({f"adam_m.{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam_v.{k}": v for k, v in optimizer.v.items()})

    table, payload = _array_table(arrays)
    header["arrays"] = table
    header["crc32"] = zlib.crc32(payload)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
    logger.bind(path=str(path), arrays=len(table), bytes=len(payload)).info("Checkpoint saved")
    return path


def read_checkpoint(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Parse and verify a checkpoint file

    Raises:
        CheckpointError: missing file, wrong magic, unsupported version, truncation or CRC mismatch
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated file ({len(blob)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic bytes)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted header ({str(e)})")

    payload = blob[start + header_len:]
    expected = sum(entry["nbytes"] for entry in header["arrays"])
    if len(payload) < expected:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header, arrays


def load_checkpoint(path: Path, expected_config=None):
    """
    Rebuild a VesselClassifier from disk

    Args:
        path: checkpoint file
        expected_config: RunConfig of the caller; its architecture must match the snapshot

    Raises:
        CheckpointError: unreadable file or arrays that do not fit the stored config
        ConfigurationError: architecture differs from `expected_config`
    """
    from app.models.classifier import VesselClassifier
    from app.schemas.config import RunConfig
    from app.schemas.dataset import CtdsvStats

    header, arrays = read_checkpoint(path)
    try:
        config = RunConfig.model_validate(header["config"])
    except Exception as e:
        raise CheckpointError(f"{path}: invalid config snapshot ({str(e)})")
    if expected_config is not None and expected_config.architecture() != config.architecture():
        diffs = [k for k, v in config.architecture().items() if expected_config.architecture()[k] != v]
        raise ConfigurationError(
            f"Checkpoint {path} was trained with a different {', '.join(diffs)} configuration"
        )

    stats = CtdsvStats.model_validate(header["ctdsv_stats"]) if header["ctdsv_stats"] else None
    model = VesselClassifier.initialize(config, ctdsv_stats=stats)
    targets = {f"param.{k}": v for k, v in model.parameters().items()}
    targets.update({f"buffer.{k}": v for k, v in model.buffers().items()})
    for name, target in targets.items():
        stored = arrays.get(name)
        if stored is None or stored.shape != target.shape or stored.dtype != target.dtype:
            raise CheckpointError(f"{path}: array {name} missing or inconsistent with the stored config")
        np.copyto(target, stored)
    for name, bn in model.norm_layers().items():
        bn.stats.num_batches_tracked = int(header["batches_tracked"].get(name, 0))
    logger.bind(path=str(path)).info("Checkpoint loaded")
    return model


def load_optimizer_state(path: Path):
    """Adam state saved alongside the model, or None when it was excluded"""
    from app.services.optimizer import AdamState

    header, arrays = read_checkpoint(path)
    scalars: Optional[Dict[str, Any]] = header.get("optimizer")
    if scalars is None:
        return None
    state = AdamState(lr=scalars["lr"], beta1=scalars["beta1"], beta2=scalars["beta2"], eps=scalars["eps"])
    state.step = scalars["step"]
    state.m = {k[len("adam_m."):]: v for k, v in arrays.items() if k.startswith("adam_m.")}
    state.v = {k[len("adam_v."):]: v for k, v in arrays.items() if k.startswith("adam_v.")}
    return state
