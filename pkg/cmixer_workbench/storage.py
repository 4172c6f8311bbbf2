"""
Storage module for the CMixer workbench
Handles persistence of datasets (CMXD), checkpoints (CMXW), JSON configs and
reports, and CSV tables. Every write goes to a temporary file that is then
renamed over the target.
"""

import csv
import io
import json
import os
import struct
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .chanmodel import ChannelDataset, ScenarioConfig
from .errors import ValidationError
from .utils import get_logger

DATASET_MAGIC = b'CMXD'
CHECKPOINT_MAGIC = b'CMXW'
FORMAT_VERSION = 1

# Initialize logger
logger = None


def _log():
    global logger
    if logger is None:
        logger = get_logger()
    return logger


def atomic_write_bytes(path, payload: bytes):
    """
    Write bytes to path via a temporary sibling file and an atomic rename.

    Args:
        path: Destination file
        payload: Bytes to write
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=str(path.parent))
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        _log().error(f"Failed to write {path}")
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


class _Reader:
    """Sequential little-endian reader that reports truncation with the file name."""

    def __init__(self, payload: bytes, source: str):
        self.buf = memoryview(payload)
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            _log().error(f"Truncated file {self.source} at byte {self.pos}")
            raise ValidationError(f"{self.source}: file is truncated.")
        chunk = self.buf[self.pos:self.pos + n].tobytes()
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack('<I', self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode('utf-8')


def _check_header(reader: _Reader, magic: bytes):
    found = reader.take(4)
    if found != magic:
        _log().error(f"Bad magic {found!r} in {reader.source}")
        raise ValidationError(f"{reader.source}: expected magic {magic!r}, found {found!r}.")
    version = reader.u32()
    if version != FORMAT_VERSION:
        _log().error(f"Unsupported version {version} in {reader.source}")
        raise ValidationError(f"{reader.source}: unsupported format version {version}.")


def _length_prefixed(text: str) -> bytes:
    raw = text.encode('utf-8')
    return struct.pack('<I', len(raw)) + raw


# -------------------------
# Datasets
# -------------------------
def encode_dataset(dataset: ChannelDataset) -> bytes:
    """Serialize channels as float32 (real, imag) pairs followed by JSON metadata."""
    channels = dataset.channels
    n_samples, n_t, n_c = channels.shape
    pairs = np.stack([channels.real, channels.imag], axis=-1).astype('<f4')
    metadata = json.dumps({
        'scenario': dataset.scenario.to_dict(),
        'scale': dataset.scale,
        'seed': dataset.seed,
    }, sort_keys=True)
    header = DATASET_MAGIC + struct.pack('<IIII', FORMAT_VERSION, n_samples, n_t, n_c)
    return header + pairs.tobytes() + _length_prefixed(metadata)


def decode_dataset(payload: bytes, source: str = '<bytes>') -> ChannelDataset:
    reader = _Reader(payload, source)
    _check_header(reader, DATASET_MAGIC)
    n_samples, n_t, n_c = reader.u32(), reader.u32(), reader.u32()
    count = n_samples * n_t * n_c * 2
    values = np.frombuffer(reader.take(4 * count), dtype='<f4').reshape(n_samples, n_t, n_c, 2)
    try:
        metadata = json.loads(reader.text())
    except json.JSONDecodeError as e:
        _log().error(f"Corrupted metadata in {source}: {e}")
        raise ValidationError(f"{source}: corrupted metadata block.") from e
    channels = values[..., 0].astype(np.float64) + 1j * values[..., 1].astype(np.float64)
    return ChannelDataset(
        channels=channels,
        scenario=ScenarioConfig.from_dict(metadata['scenario']),
        scale=float(metadata['scale']),
        seed=int(metadata['seed']),
    )


def save_dataset(path, dataset: ChannelDataset):
    atomic_write_bytes(path, encode_dataset(dataset))
    _log().info(f"Saved dataset to {path}: {len(dataset)} samples")


def load_dataset(path) -> ChannelDataset:
    """
    Load a CMXD dataset file.

    Raises:
        ValidationError: If the file is missing, truncated or malformed
    """
    path = Path(path)
    if not path.exists():
        _log().error(f"Dataset file {path} not found")
        raise ValidationError(f"Dataset file {path} not found.")
    dataset = decode_dataset(path.read_bytes(), str(path))
    _log().info(f"Loaded dataset from {path}: {len(dataset)} samples")
    return dataset


# -------------------------
# Checkpoints
# -------------------------
def encode_checkpoint(named_arrays) -> bytes:
    """Serialize named tensors: name, rank, dims, float32 payload."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack('<II', FORMAT_VERSION, len(named_arrays)))
    for name, array in named_arrays.items():
        array = np.asarray(array)
        out.write(_length_prefixed(name))
        out.write(struct.pack('<I', array.ndim))
        out.write(struct.pack(f'<{array.ndim}I', *array.shape))
        out.write(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return out.getvalue()


def decode_checkpoint(payload: bytes, source: str = '<bytes>') -> "OrderedDict[str, np.ndarray]":
    reader = _Reader(payload, source)
    _check_header(reader, CHECKPOINT_MAGIC)
    tensors = OrderedDict()
    for _ in range(reader.u32()):
        name = reader.text()
        rank = reader.u32()
        dims = struct.unpack(f'<{rank}I', reader.take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype='<f4').reshape(dims).astype(np.float32)
    return tensors


def descriptor_path(checkpoint_path) -> Path:
    return Path(checkpoint_path).with_suffix('.json')


def save_checkpoint(path, named_arrays, descriptor: dict = None):
    """
    Write a CMXW checkpoint and, when given, the model descriptor beside it.

    Args:
        path: Checkpoint file
        named_arrays: Ordered mapping name -> array
        descriptor: Architecture descriptor stored as <path>.json
    """
    narrowed = [name for name, array in named_arrays.items() if np.asarray(array).dtype == np.float64]
    if narrowed:
        _log().warning(f"Checkpoint {path} stores float32; rounding float64 tensors {narrowed}")
    atomic_write_bytes(path, encode_checkpoint(named_arrays))
    if descriptor is not None:
        save_json(descriptor_path(path), descriptor)
    _log().info(f"Saved checkpoint to {path}: {len(named_arrays)} tensors")


def load_checkpoint(path):
    """
    Load a checkpoint and its descriptor (None when absent).

    Returns:
        Tuple of (OrderedDict name -> float32 array, descriptor dict or None)
    """
    path = Path(path)
    if not path.exists():
        _log().error(f"Checkpoint {path} not found")
        raise ValidationError(f"Checkpoint {path} not found.")
    tensors = decode_checkpoint(path.read_bytes(), str(path))
    desc_file = descriptor_path(path)
    descriptor = load_json(desc_file) if desc_file.exists() else None
    _log().info(f"Loaded checkpoint from {path}: {len(tensors)} tensors")
    return tensors, descriptor


# -------------------------
# JSON and CSV
# -------------------------
def save_json(path, data):
    atomic_write_text(path, json.dumps(data, indent=4, sort_keys=True, ensure_ascii=False) + '\n')
    _log().info(f"Saved JSON to {path}")


def load_json(path):
    """
    Load a JSON document.

    Raises:
        ValidationError: If the file is missing or not valid JSON
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        _log().error(f"JSON file {path} not found")
        raise ValidationError(f"File {path} not found.") from None
    except json.JSONDecodeError as e:
        _log().error(f"Corrupted JSON file {path}: {e}")
        raise ValidationError(f"{path}: invalid JSON ({e.msg}).") from e
    _log().info(f"Loaded JSON from {path}")
    return data


def save_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())
    _log().info(f"Saved CSV to {path}: {len(rows)} rows")
