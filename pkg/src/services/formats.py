"""
On-disk formats.

Binary files are little-endian. Each starts with a fixed header and may end
with a metadata trailer: ``b"META"``, a uint32 byte length, then UTF-8 JSON
with sorted keys.

* events (``EBEV``): header ``4s magic, uint32 version, uint64 count``
  followed by ``count`` records of float32 x, y, z (nm), float32 energy (eV)
  and uint8 channel.
* exits (``EBEX``): same header, records of float32 theta (deg), energy (eV)
  and radius (nm).
* grids (``EBDG``): header ``4s magic, uint16 version, uint16 channels,
  float64 pitch (nm), uint32 width, uint32 height`` followed by the channels
  as row-major float32 arrays.
"""
import hashlib
import json
import logging
import os
import struct
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from src.conf.config import TOOL_VERSION
from src.services.errors import FormatError
from src.services.psf import PsfKernel
from src.services.transport import (
    EVENT_DTYPE, EXIT_DTYPE, DepositionRecord, DepositionSummary,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
EVENT_MAGIC = b'EBEV'
EXIT_MAGIC = b'EBEX'
GRID_MAGIC = b'EBDG'
META_MAGIC = b'META'

DUMP_HEADER = struct.Struct('<4sIQ')
GRID_HEADER = struct.Struct('<4sHHdII')
META_HEADER = struct.Struct('<4sI')

EVENT_RECORD = np.dtype([
    ('x', '<f4'), ('y', '<f4'), ('z', '<f4'), ('energy', '<f4'), ('channel', 'u1'),
])
EXIT_RECORD = np.dtype([('theta', '<f4'), ('energy', '<f4'), ('radius', '<f4')])


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def run_metadata(config: dict, seed: Optional[int]) -> dict:
    return {'tool_version': TOOL_VERSION, 'config_hash': config_hash(config),
            'seed': seed}


def _meta_bytes(meta: dict) -> bytes:
    body = json.dumps(meta, sort_keys=True, default=str).encode('utf-8')
    return META_HEADER.pack(META_MAGIC, len(body)) + body


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as error:
        raise FormatError(f'cannot read {path}: {error.strerror}') from error


def _split_meta(data: bytes, offset: int, path) -> dict:
    if offset == len(data):
        return {}
    if len(data) - offset < META_HEADER.size:
        raise FormatError(f'{path}: truncated metadata trailer')
    magic, length = META_HEADER.unpack_from(data, offset)
    if magic != META_MAGIC:
        raise FormatError(f'{path}: unexpected bytes after the records')
    body = data[offset + META_HEADER.size:]
    if len(body) != length:
        raise FormatError(f'{path}: metadata trailer has {len(body)} bytes, expected {length}')
    try:
        return json.loads(body.decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise FormatError(f'{path}: corrupt metadata trailer') from error


def _write_dump(path, magic, records: np.ndarray, meta: dict) -> None:
    with open(path, 'wb') as handle:
        handle.write(DUMP_HEADER.pack(magic, FORMAT_VERSION, records.size))
        handle.write(records.tobytes())
        handle.write(_meta_bytes(meta))


def _read_dump(path, magic, dtype: np.dtype) -> tuple[np.ndarray, dict]:
    data = _read_bytes(path)
    if len(data) < DUMP_HEADER.size:
        raise FormatError(f'{path}: file shorter than its header')
    found, version, count = DUMP_HEADER.unpack_from(data)
    if found != magic:
        raise FormatError(f'{path}: bad magic {found!r}, expected {magic!r}')
    if version != FORMAT_VERSION:
        raise FormatError(f'{path}: unsupported version {version}')
    end = DUMP_HEADER.size + count * dtype.itemsize
    if len(data) < end:
        raise FormatError(f'{path}: truncated, header announces {count} records')
    records = np.frombuffer(data, dtype=dtype, count=count, offset=DUMP_HEADER.size)
    return records, _split_meta(data, end, path)


def write_events(record: DepositionRecord, path, metadata: Optional[dict] = None) -> None:
    """
    The write_events function stores the deposition events, with the
    summary and stack description in the trailer.

    :param record: DepositionRecord to store
    :param path: Target file
    :param metadata: Run metadata (tool version, config hash, seed)
    :return: None
    """
    events = np.empty(record.events.size, EVENT_RECORD)
    for name in EVENT_RECORD.names:
        events[name] = record.events[name]
    meta = {
        'summary': asdict(record.summary),
        'layers': [list(layer) for layer in record.layers],
        'substrate': record.substrate,
        'seed': record.seed,
        'record': record.metadata,
        **(metadata or {}),
    }
    _write_dump(path, EVENT_MAGIC, events, meta)


def write_exits(record: DepositionRecord, path, metadata: Optional[dict] = None) -> None:
    exits = np.empty(record.exits.size, EXIT_RECORD)
    for name in EXIT_RECORD.names:
        exits[name] = record.exits[name]
    _write_dump(path, EXIT_MAGIC, exits, {'seed': record.seed, **(metadata or {})})


def read_events(path, exits_path=None) -> DepositionRecord:
    """
    The read_events function loads an event dump, and the exits file when
    given, back into a DepositionRecord.

    :param path: Event dump
    :param exits_path: Optional exits file
    :return: DepositionRecord
    """
    records, meta = _read_dump(path, EVENT_MAGIC, EVENT_RECORD)
    events = np.empty(records.size, EVENT_DTYPE)
    for name in EVENT_DTYPE.names:
        events[name] = records[name]
    exits = np.empty(0, EXIT_DTYPE)
    if exits_path is not None:
        raw, _ = _read_dump(exits_path, EXIT_MAGIC, EXIT_RECORD)
        exits = np.empty(raw.size, EXIT_DTYPE)
        for name in EXIT_DTYPE.names:
            exits[name] = raw[name]
    summary = meta.get('summary')
    if summary is None:
        count = int(meta.get('trajectory_count', 1))
        summary = {'trajectory_count': count, 'beam_energy': 0.0,
                   'total_deposited': float(events['energy'].sum()),
                   'exit_count': int(exits.size)}
    try:
        summary = DepositionSummary(**summary)
    except TypeError as error:
        raise FormatError(f'{path}: summary metadata does not match') from error
    return DepositionRecord(
        events=events,
        exits=exits,
        summary=summary,
        layers=tuple((name, float(t)) for name, t in meta.get('layers', [])),
        substrate=meta.get('substrate', ''),
        seed=int(meta.get('seed') or 0),
        metadata=meta.get('record', {}),
    )


def write_grid(path, pitch: float, channels: dict[str, np.ndarray],
               metadata: Optional[dict] = None) -> None:
    """
    The write_grid function stores one or more same-shaped channels.

    :param path: Target file
    :param pitch: Cell size in nm
    :param channels: Channel name to 2D array, written in insertion order
    :param metadata: Extra trailer entries
    :return: None
    """
    arrays = list(channels.values())
    rows, cols = arrays[0].shape
    if any(a.shape != (rows, cols) for a in arrays):
        raise FormatError('grid channels differ in shape')
    with open(path, 'wb') as handle:
        handle.write(GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, len(arrays),
                                      float(pitch), cols, rows))
        for array in arrays:
            handle.write(np.ascontiguousarray(array, dtype='<f4').tobytes())
        handle.write(_meta_bytes({'channels': list(channels), **(metadata or {})}))


def read_grid(path) -> tuple[float, dict[str, np.ndarray], dict]:
    """
    The read_grid function loads a grid file.

    :param path: Grid file
    :return: (pitch, channels, metadata)
    """
    data = _read_bytes(path)
    if len(data) < GRID_HEADER.size:
        raise FormatError(f'{path}: file shorter than its header')
    magic, version, count, pitch, cols, rows = GRID_HEADER.unpack_from(data)
    if magic != GRID_MAGIC:
        raise FormatError(f'{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}')
    if version != FORMAT_VERSION:
        raise FormatError(f'{path}: unsupported version {version}')
    size = rows * cols * 4
    end = GRID_HEADER.size + count * size
    if len(data) < end:
        raise FormatError(f'{path}: truncated grid data')
    meta = _split_meta(data, end, path)
    names = meta.get('channels') or [f'channel{i}' for i in range(count)]
    channels = {}
    for index, name in enumerate(names[:count]):
        offset = GRID_HEADER.size + index * size
        channels[name] = np.frombuffer(data, '<f4', rows * cols, offset).reshape(rows, cols).astype(float)
    return pitch, channels, meta


def write_csv(path, frame: pd.DataFrame, metadata: Optional[dict] = None) -> None:
    """CSV with ``# key: value`` header lines."""
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        for key, value in (metadata or {}).items():
            handle.write(f'# {key}: {value}\n')
        frame.to_csv(handle, index=False, float_format='%.9g', lineterminator='\n')


def read_csv(path) -> tuple[pd.DataFrame, dict]:
    try:
        with open(path, encoding='utf-8') as handle:
            lines = handle.read().splitlines()
    except OSError as error:
        raise FormatError(f'cannot read {path}: {error.strerror}') from error
    meta = {}
    for line in lines:
        if not line.startswith('#'):
            break
        key, _, value = line[1:].partition(':')
        meta[key.strip()] = value.strip()
    return pd.read_csv(path, comment='#'), meta


def write_text(path, lines: dict, metadata: Optional[dict] = None) -> None:
    """``key: value`` text block, metadata first."""
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for key, value in {**(metadata or {}), **lines}.items():
            handle.write(f'{key}: {value}\n')


def write_pgm(path, values: np.ndarray, comment: str = '', meta: Optional[dict] = None) -> None:
    """
    The write_pgm function writes an 8-bit binary graymap scaled to the
    array maximum, with +y pointing up.

    :param path: Target file
    :param values: 2D array indexed [iy, ix]
    :param comment: Optional single-line header comment
    :param meta: Run metadata, one header comment line per key
    :return: None
    """
    top = float(values.max()) if values.size else 0.0
    scaled = np.zeros(values.shape, dtype=np.uint8)
    if top > 0:
        scaled = np.clip(np.round(values / top * 255), 0, 255).astype(np.uint8)
    rows, cols = values.shape
    header = 'P5\n'
    if comment:
        header += f'# {comment}\n'
    for key, value in sorted((meta or {}).items()):
        header += f'# {key}: {value}\n'
    header += f'{cols} {rows}\n255\n'
    with open(path, 'wb') as handle:
        handle.write(header.encode('ascii'))
        handle.write(scaled[::-1].tobytes())


class OutputSet:
    """Temporary paths inside an output directory, renamed on commit."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.pending: dict[Path, Path] = {}

    def path(self, name: str) -> Path:
        final = self.directory / name
        temp = self.directory / f'.{name}.partial'
        self.pending[final] = temp
        return temp

    def commit(self) -> list[Path]:
        for final, temp in self.pending.items():
            os.replace(temp, final)
        return list(self.pending)

    def discard(self) -> None:
        for temp in self.pending.values():
            temp.unlink(missing_ok=True)


@contextmanager
def atomic_outputs(directory) -> Iterator[OutputSet]:
    """
    The atomic_outputs function hands out temporary file paths and renames
    them into place only if the block finishes; otherwise they are removed.

    :param directory: Output directory, created when missing
    :return: OutputSet
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise FormatError(f'cannot create {directory}: {error.strerror}') from error
    outputs = OutputSet(directory)
    try:
        yield outputs
    except BaseException:
        outputs.discard()
        raise
    outputs.commit()
    logger.info('wrote %s', ', '.join(p.name for p in outputs.pending))


def write_kernel(kernel: PsfKernel, path, metadata: Optional[dict] = None) -> None:
    write_grid(
        path, kernel.pitch,
        {'incident': kernel.incident, 'backscattered': kernel.backscattered},
        {
            'half_width': kernel.half_width,
            'provenance': kernel.provenance,
            'discarded_fraction': kernel.discarded_fraction,
            **(metadata or {}),
        },
    )


def read_kernel(path) -> PsfKernel:
    """
    The read_kernel function loads a kernel written by write_kernel.

    :param path: Grid file with incident and backscattered channels
    :return: PsfKernel
    """
    pitch, channels, meta = read_grid(path)
    missing = {'incident', 'backscattered'} - set(channels)
    if missing:
        raise FormatError(f'{path}: not a kernel file (missing {", ".join(sorted(missing))})')
    rows, cols = channels['incident'].shape
    if rows != cols or rows % 2 == 0:
        raise FormatError(f'{path}: kernel grid must be square with odd size')
    return PsfKernel(
        pitch=pitch,
        half_width=float(meta.get('half_width', (rows // 2) * pitch)),
        incident=channels['incident'],
        backscattered=channels['backscattered'],
        provenance=meta.get('provenance', 'table'),
        discarded_fraction=meta.get('discarded_fraction', {}),
    )
