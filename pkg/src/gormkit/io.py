"""Binary map files and atomic writes.

Layout (little-endian)::

    magic "GORM" | version u16 | arm_hash 32B | origin 3*f64 | spacing f64
    | dims 3*u32 | n_dirs u32 | n_rolls u32 | payload_kind u8 | payload

Every payload starts with a u64 record count. RM records are per-voxel
orientation bitmasks packed into u64 words (bit ``j`` of the voxel lives in
word ``j // 64`` at position ``j % 64``) followed by the f32 index column.
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gorm import GormDistribution, OrmTable
from .rmap import GridSpec, OrientationSet, ReachabilityMap
from .transforms import Pose

MAGIC = b"GORM"
VERSION = 1
_HEADER = struct.Struct("<4sH32s3dd3III B")
_COUNT = struct.Struct("<Q")

_ORM_DTYPE = np.dtype([("t", "<f8", 3), ("q", "<f8", 4), ("score", "<f8"),
                       ("voxel", "<u4"), ("orient", "<u4")])
_GORM_DTYPE = np.dtype([("t", "<f8", 3), ("q", "<f8", 4), ("score", "<f8"), ("source", "<u8")])


class PayloadKind(enum.IntEnum):
    RM = 0
    ORM = 1
    GORM = 2


class MapFormatError(Exception):
    """Unreadable map file; ``code`` identifies the corruption class."""

    code = "format_error"

    def __str__(self):
        return f"{self.code.replace('_', ' ')}: {super().__str__()}"


class BadMagic(MapFormatError):
    code = "bad_magic"


class UnsupportedVersion(MapFormatError):
    code = "unsupported_version"


class TruncatedPayload(MapFormatError):
    code = "truncated_payload"


class DimsMismatch(MapFormatError):
    code = "dims_mismatch"


@dataclass(frozen=True)
class MapHeader:
    arm_hash: bytes
    grid: GridSpec
    n_dirs: int
    n_rolls: int
    kind: PayloadKind
    version: int = VERSION

    @classmethod
    def for_map(cls, rm: ReachabilityMap, kind: PayloadKind = PayloadKind.RM) -> "MapHeader":
        return cls(rm.arm_hash, rm.grid, rm.orient.n_dirs, rm.orient.n_rolls, kind)

    def pack(self) -> bytes:
        g = self.grid
        return _HEADER.pack(MAGIC, self.version, self.arm_hash, *g.origin, g.spacing, *g.dims,
                            self.n_dirs, self.n_rolls, int(self.kind))


def atomic_write(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        # mkstemp creates 0600; give the result the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack_bits(bins: np.ndarray) -> np.ndarray:
    n_vox, n_bits = bins.shape
    n_words = (n_bits + 63) // 64
    padded = np.zeros((n_vox, n_words * 64), dtype=np.uint8)
    padded[:, :n_bits] = bins
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").reshape(n_vox, n_words)


def _unpack_bits(words: np.ndarray, n_bits: int) -> np.ndarray:
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :n_bits].astype(bool)


def encode_map(rm: ReachabilityMap) -> bytes:
    head = MapHeader.for_map(rm).pack()
    words = _pack_bits(rm.bins)
    return b"".join([head, _COUNT.pack(rm.grid.n_voxels), words.tobytes(),
                     rm.index.astype("<f4").tobytes()])


def encode_orm(orm: OrmTable, header: MapHeader) -> bytes:
    rec = np.zeros(len(orm), dtype=_ORM_DTYPE)
    rec["t"], rec["q"], rec["score"] = orm.t, orm.q, orm.score
    rec["voxel"], rec["orient"] = orm.voxel, orm.orient
    head = MapHeader(header.arm_hash, header.grid, header.n_dirs, header.n_rolls, PayloadKind.ORM)
    return head.pack() + _COUNT.pack(len(orm)) + rec.tobytes()


def encode_gorm(gorm: GormDistribution, header: MapHeader) -> bytes:
    rec = np.zeros(len(gorm), dtype=_GORM_DTYPE)
    rec["t"], rec["q"], rec["score"], rec["source"] = gorm.t, gorm.q, gorm.score, gorm.source
    head = MapHeader(header.arm_hash, header.grid, header.n_dirs, header.n_rolls, PayloadKind.GORM)
    meta = np.concatenate([gorm.target_pose_world.as_array(), [gorm.reach_threshold]]).astype("<f8")
    return head.pack() + meta.tobytes() + _COUNT.pack(len(gorm)) + rec.tobytes()


def read_header(buf: bytes) -> MapHeader:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    f = _HEADER.unpack_from(buf)
    version = f[1]
    if version != VERSION:
        raise UnsupportedVersion(f"file version {version}, this build reads {VERSION}")
    try:
        kind = PayloadKind(f[12])
    except ValueError:
        raise MapFormatError(f"unknown payload kind {f[12]}") from None
    grid = GridSpec(tuple(f[3:6]), f[6], tuple(f[7:10]))
    return MapHeader(f[2], grid, int(f[10]), int(f[11]), kind, version)


def _take(buf, offset, nbytes, what):
    end = offset + nbytes
    if end > len(buf):
        raise TruncatedPayload(f"{what} needs {nbytes} bytes at offset {offset}, file has {len(buf)}")
    return buf[offset:end], end


def _finish(buf, offset):
    if offset != len(buf):
        raise DimsMismatch(f"{len(buf) - offset} trailing bytes after payload")


def decode(buf: bytes):
    """Parse a map file into ``(header, object)``."""
    buf = bytes(buf)
    try:
        header = read_header(buf)
    except ValueError as exc:
        raise MapFormatError(f"inconsistent header ({exc})") from None
    try:
        return header, _decode_payload(buf, header)
    except ValueError as exc:
        # model invariants (index vs popcount, scores, shapes) failing on decoded data
        raise MapFormatError(f"inconsistent payload ({exc})") from None


def _decode_payload(buf: bytes, header: MapHeader):
    off = _HEADER.size
    if header.kind is PayloadKind.GORM:
        raw, off = _take(buf, off, 8 * 8, "GORM target")
        meta = np.frombuffer(raw, dtype="<f8")
    raw, off = _take(buf, off, _COUNT.size, "record count")
    (count,) = _COUNT.unpack(raw)

    if header.kind is PayloadKind.RM:
        if count != header.grid.n_voxels:
            raise DimsMismatch(f"payload holds {count} voxels, dims {header.grid.dims} need "
                               f"{header.grid.n_voxels}")
        orient = OrientationSet(header.n_dirs, header.n_rolls)
        n_words = (len(orient) + 63) // 64
        raw, off = _take(buf, off, count * n_words * 8, "bitmask")
        words = np.frombuffer(raw, dtype="<u8").reshape(count, n_words)
        raw, off = _take(buf, off, count * 4, "index")
        index = np.frombuffer(raw, dtype="<f4").copy()
        _finish(buf, off)
        bins = _unpack_bits(words, len(orient))
        return ReachabilityMap(header.grid, orient, bins, header.arm_hash, index)

    dtype = _ORM_DTYPE if header.kind is PayloadKind.ORM else _GORM_DTYPE
    raw, off = _take(buf, off, count * dtype.itemsize, "records")
    _finish(buf, off)
    rec = np.frombuffer(raw, dtype=dtype)
    t = np.ascontiguousarray(rec["t"], dtype=np.float64)
    q = np.ascontiguousarray(rec["q"], dtype=np.float64)
    score = rec["score"].astype(np.float64)
    if header.kind is PayloadKind.ORM:
        if count and int(rec["voxel"].max()) >= header.grid.n_voxels:
            raise DimsMismatch("ORM entry refers to a voxel outside the grid")
        return OrmTable(t, q, score, rec["voxel"].astype(np.int64), rec["orient"].astype(np.int64))
    target = Pose(meta[:3], meta[3:7])
    return GormDistribution(target, t, q, score, float(meta[7]), rec["source"].astype(np.int64))


def save_map(path, rm: ReachabilityMap) -> None:
    atomic_write(path, encode_map(rm))


def save_orm(path, orm: OrmTable, header: MapHeader) -> None:
    atomic_write(path, encode_orm(orm, header))


def save_gorm(path, gorm: GormDistribution, header: MapHeader) -> None:
    atomic_write(path, encode_gorm(gorm, header))


def load(path):
    """Read any map file; returns ``(header, obj)``."""
    with open(path, "rb") as f:
        return decode(f.read())


def load_map(path) -> ReachabilityMap:
    header, obj = load(path)
    if header.kind is not PayloadKind.RM:
        raise MapFormatError(f"expected an RM payload, found {header.kind.name}")
    return obj
