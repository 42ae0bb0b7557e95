"""On-disk formats: FlowPack containers, Middlebury ``.flo`` and track files.

FlowPack layout (little endian)::

    bytes 0..7    magic b"MFTFLOW1"
    bytes 8..11   u32 width
    bytes 12..15  u32 height
    bytes 16..19  u32 plane mask  (bit0 flow-u, bit1 flow-v, bit2 variance,
                                   bit3 occlusion, bit4 certainty)
    then one row-major float32 plane per set bit, in bit order

The header is 20 bytes long (8 magic + 3 * 4), so a pack holding ``n``
planes of ``w x h`` is exactly ``20 + n * w * h * 4`` bytes.
"""

from __future__ import annotations

import contextlib
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import FlowBundle, FlowField, ImageExtent, ScalarField
from .errors import BadMagic, ExtentOverflow, FormatError, MaskMismatch, TruncatedFile

FLOWPACK_MAGIC = b"MFTFLOW1"
FLOWPACK_HEADER = struct.Struct("<8sIII")
PLANE_BITS = {"u": 0, "v": 1, "variance": 2, "occlusion": 3, "certainty": 4}
PLANE_ORDER = sorted(PLANE_BITS, key=PLANE_BITS.get)

FLO_MAGIC = b"PIEH"
FLO_HEADER = struct.Struct("<4sii")


@contextlib.contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "wb") -> Iterator:
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _check_magic(data: bytes, magic: bytes, path) -> None:
    head = data[: len(magic)]
    if head == magic:
        return
    if len(head) < len(magic) and magic.startswith(head):
        raise TruncatedFile(f"{path}: file ends inside the magic number")
    raise BadMagic(f"{path}: expected magic {magic!r}, found {head!r}")


# ---------------------------------------------------------------------------
# FlowPack
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowPack:
    """Decoded FlowPack contents: an extent and float32 planes keyed by name."""

    extent: ImageExtent
    planes: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def mask(self) -> int:
        return sum(1 << PLANE_BITS[name] for name in self.planes)

    def flow(self) -> FlowField:
        return FlowField(self.extent, self.planes["u"], self.planes["v"])

    def bundle(self) -> FlowBundle:
        try:
            var = self.planes["variance"]
            occ = self.planes["occlusion"]
        except KeyError as exc:
            raise MaskMismatch(f"pack has no {exc.args[0]} plane") from None
        return FlowBundle(
            self.flow(),
            ScalarField(self.extent, var, "variance"),
            ScalarField(self.extent, occ, "occlusion"),
        )

    @classmethod
    def from_bundle(cls, bundle: FlowBundle) -> "FlowPack":
        u, v, var, occ = bundle.planes()
        return cls(bundle.extent, {"u": u, "v": v, "variance": var, "occlusion": occ})


def write_flowpack(pack: FlowPack | FlowBundle, path: str | os.PathLike) -> None:
    if isinstance(pack, FlowBundle):
        pack = FlowPack.from_bundle(pack)
    unknown = set(pack.planes) - set(PLANE_BITS)
    if unknown:
        raise MaskMismatch(f"unknown planes {sorted(unknown)}")
    if "u" not in pack.planes or "v" not in pack.planes:
        raise MaskMismatch("flow-u and flow-v planes are mandatory")
    ext = pack.extent
    with atomic_write(path) as fh:
        fh.write(FLOWPACK_HEADER.pack(FLOWPACK_MAGIC, ext.width, ext.height, pack.mask))
        for name in PLANE_ORDER:
            if name in pack.planes:
                plane = np.asarray(pack.planes[name])
                if plane.shape != ext.shape:
                    raise MaskMismatch(f"plane {name} has shape {plane.shape}, expected {ext.shape}")
                fh.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_flowpack(path: str | os.PathLike) -> FlowPack:
    data = Path(path).read_bytes()
    _check_magic(data, FLOWPACK_MAGIC, path)
    if len(data) < FLOWPACK_HEADER.size:
        raise TruncatedFile(f"{path}: header needs {FLOWPACK_HEADER.size} bytes, got {len(data)}")
    _, width, height, mask = FLOWPACK_HEADER.unpack_from(data)
    if mask >> len(PLANE_BITS):
        raise MaskMismatch(f"{path}: unknown bits in plane mask {mask:#x}")
    if not (mask & 1 and mask & 2):
        raise MaskMismatch(f"{path}: flow-u and flow-v planes are mandatory (mask {mask:#x})")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty extent {width}x{height}")
    names = [n for n in PLANE_ORDER if mask >> PLANE_BITS[n] & 1]
    plane_bytes = width * height * 4
    payload = len(data) - FLOWPACK_HEADER.size
    if plane_bytes * len(names) > payload:
        raise ExtentOverflow(
            f"{path}: {width}x{height} with {len(names)} planes needs "
            f"{plane_bytes * len(names)} bytes, file holds {payload}"
        )
    if plane_bytes * len(names) < payload:
        raise MaskMismatch(f"{path}: {payload} payload bytes but mask declares {len(names)} planes")
    extent = ImageExtent(width, height)
    planes = {}
    for k, name in enumerate(names):
        start = FLOWPACK_HEADER.size + k * plane_bytes
        plane = np.frombuffer(data, dtype="<f4", count=width * height, offset=start)
        planes[name] = plane.astype(np.float32).reshape(extent.shape)
    return FlowPack(extent, planes)


# ---------------------------------------------------------------------------
# Middlebury .flo
# ---------------------------------------------------------------------------


def write_flo(flow: FlowField, path: str | os.PathLike) -> None:
    ext = flow.extent
    uv = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with atomic_write(path) as fh:
        fh.write(FLO_HEADER.pack(FLO_MAGIC, ext.width, ext.height))
        fh.write(uv.tobytes())


def read_flo(path: str | os.PathLike) -> FlowField:
    data = Path(path).read_bytes()
    _check_magic(data, FLO_MAGIC, path)
    if len(data) < FLO_HEADER.size:
        raise TruncatedFile(f"{path}: header needs {FLO_HEADER.size} bytes, got {len(data)}")
    _, width, height = FLO_HEADER.unpack_from(data)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad extent {width}x{height}")
    need = width * height * 8
    if len(data) - FLO_HEADER.size < need:
        raise TruncatedFile(f"{path}: needs {need} payload bytes, got {len(data) - FLO_HEADER.size}")
    uv = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=FLO_HEADER.size)
    uv = uv.astype(np.float32).reshape(height, width, 2)
    return FlowField(ImageExtent(width, height), uv[..., 0].copy(), uv[..., 1].copy())


# ---------------------------------------------------------------------------
# Track files
# ---------------------------------------------------------------------------

TRACK_COLUMNS = ("point_id", "frame", "x", "y", "visible", "source", "variance")
GT_COLUMNS = ("point_id", "frame", "x", "y", "visible")
TRACK_TAG = "mftrack-tracks v1"
GT_TAG = "mftrack-gt v1"


@dataclass
class TrackTable:
    """Per-point trajectories as read from, or destined for, a track file.

    ``positions`` is ``(P, N, 2)``, ``visible`` ``(P, N)`` bool. ``source``
    and ``variance`` are ``None`` for ground-truth tables.
    """

    point_ids: np.ndarray
    positions: np.ndarray
    visible: np.ndarray
    source: np.ndarray | None = None
    variance: np.ndarray | None = None
    extent: ImageExtent | None = None

    @property
    def num_points(self) -> int:
        return len(self.point_ids)

    @property
    def num_frames(self) -> int:
        return self.positions.shape[1]


def _fmt(value: float) -> str:
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def format_tracks(table: TrackTable, gt: bool = False) -> str:
    tag, cols = (GT_TAG, GT_COLUMNS) if gt else (TRACK_TAG, TRACK_COLUMNS)
    lines = [f"# {tag}", "# " + " ".join(cols)]
    if table.extent is not None:
        lines.append(f"# extent {table.extent.width} {table.extent.height}")
    for p, pid in enumerate(table.point_ids):
        for f in range(table.num_frames):
            x, y = table.positions[p, f]
            row = [str(int(pid)), str(f + 1), _fmt(x), _fmt(y), "1" if table.visible[p, f] else "0"]
            if not gt:
                src = table.source[p, f] if table.source is not None else "a"
                var = table.variance[p, f] if table.variance is not None else 0.0
                row += [str(src), _fmt(var)]
            lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def write_tracks(table: TrackTable, path: str | os.PathLike, gt: bool = False) -> None:
    text = format_tracks(table, gt=gt)
    with atomic_write(path, "w") as fh:
        fh.write(text)


def parse_tracks(lines: Iterable[str], origin: str = "<tracks>") -> TrackTable:
    lines = iter(lines)
    tag = next(lines, "").strip()
    if tag not in (f"# {TRACK_TAG}", f"# {GT_TAG}"):
        raise BadMagic(f"{origin}: unrecognised track file header {tag!r}")
    gt = tag == f"# {GT_TAG}"
    cols = GT_COLUMNS if gt else TRACK_COLUMNS
    header = next(lines, "").lstrip("#").split()
    if tuple(header) != cols:
        raise FormatError(f"{origin}: expected columns {cols}, got {tuple(header)}")
    rows: dict[int, list] = {}
    extent = None
    for lineno, line in enumerate(lines, start=3):
        line = line.strip()
        if line.startswith("# extent"):
            try:
                extent = ImageExtent(*(int(t) for t in line.split()[2:4]))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{origin}:{lineno}: bad extent line: {exc}") from None
            continue
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != len(cols):
            raise FormatError(f"{origin}:{lineno}: expected {len(cols)} fields, got {len(parts)}")
        rows.setdefault(int(parts[0]), []).append(parts)
    if not rows:
        raise FormatError(f"{origin}: no track rows")
    pids = list(rows)
    n = len(rows[pids[0]])
    for pid in pids:
        frames = [int(r[1]) for r in rows[pid]]
        if frames != list(range(1, n + 1)):
            raise FormatError(f"{origin}: point {pid} frames are not 1..{n} in order")
    pos = np.array([[[float(r[2]), float(r[3])] for r in rows[pid]] for pid in pids])
    vis = np.array([[r[4] == "1" for r in rows[pid]] for pid in pids], dtype=bool)
    table = TrackTable(np.array(pids, dtype=np.int64), pos, vis, extent=extent)
    if not gt:
        table.source = np.array([[r[5] for r in rows[pid]] for pid in pids])
        table.variance = np.array([[float(r[6]) for r in rows[pid]] for pid in pids])
    return table


def read_tracks(path: str | os.PathLike) -> TrackTable:
    with open(path, encoding="utf-8") as fh:
        return parse_tracks(fh, origin=str(path))


def is_gt_table(table: TrackTable) -> bool:
    return table.source is None
