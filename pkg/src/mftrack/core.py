"""Field and point types plus the sampling primitives everything else uses.

Coordinates: pixel centers sit on integer coordinates, ``x`` is the column,
``y`` the row, origin top-left. Arrays are stored row-major as ``(height,
width)``.

Two notions of "inside" are used:

* the *lattice* ``[0, w-1] x [0, h-1]``, where plain bilinear sampling is
  defined (``in_bounds``, ``sample_bilinear``);
* the *pixel domain* ``[-0.5, w-0.5) x [-0.5, h-0.5)``, the area covered by
  the image pixels (``in_domain``). Point advancing accepts the half-pixel
  margin by replicating edge values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExtentMismatch, OutOfBounds, RoleMismatch

ROLES = ("variance", "certainty", "occlusion")
LATTICE_TOL = 1e-6


@dataclass(frozen=True)
class ImageExtent:
    width: int
    height: int

    def __post_init__(self) -> None:
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError(f"extent must be integral, got {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"extent must be positive, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    @classmethod
    def of(cls, array: np.ndarray) -> "ImageExtent":
        h, w = np.shape(array)[:2]
        return cls(int(w), int(h))

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


def _frozen(values, extent: ImageExtent, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != extent.shape:
        raise ExtentMismatch(f"{name} has shape {arr.shape}, expected {extent.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    arr = arr.view()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement from one frame to another."""

    extent: ImageExtent
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _frozen(self.u, self.extent, "u"))
        object.__setattr__(self, "v", _frozen(self.v, self.extent, "v"))
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow contains non-finite values")

    @classmethod
    def from_uv(cls, u, v) -> "FlowField":
        u = np.asarray(u)
        return cls(ImageExtent.of(u), u, v)

    @classmethod
    def zeros(cls, extent: ImageExtent, dtype=np.float64) -> "FlowField":
        return cls(extent, np.zeros(extent.shape, dtype), np.zeros(extent.shape, dtype))

    @classmethod
    def constant(cls, extent: ImageExtent, du: float, dv: float) -> "FlowField":
        return cls(extent, np.full(extent.shape, float(du)), np.full(extent.shape, float(dv)))

    def __add__(self, other: "FlowField") -> "FlowField":
        if other.extent != self.extent:
            raise ExtentMismatch(f"{self.extent} vs {other.extent}")
        return FlowField(self.extent, self.u + other.u, self.v + other.v)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Dense per-pixel scalar with a declared role (variance, certainty or occlusion)."""

    extent: ImageExtent
    values: np.ndarray
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        vals = _frozen(self.values, self.extent, self.role)
        if np.isnan(vals).any():
            raise ValueError(f"{self.role} field contains NaN")
        if self.role == "variance":
            if (vals < 0).any():
                raise ValueError("variance must be non-negative")
        elif ((vals < 0) | (vals > 1)).any():
            raise ValueError(f"{self.role} values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    @classmethod
    def full(cls, extent: ImageExtent, value: float, role: str) -> "ScalarField":
        return cls(extent, np.full(extent.shape, float(value)), role)

    def require_role(self, role: str) -> None:
        if self.role != role:
            raise RoleMismatch(f"expected a {role} field, got {self.role}")


@dataclass(frozen=True, eq=False)
class FlowBundle:
    """Flow with its per-pixel variance and occlusion score."""

    flow: FlowField
    variance: ScalarField
    occlusion: ScalarField

    def __post_init__(self) -> None:
        self.variance.require_role("variance")
        self.occlusion.require_role("occlusion")
        if not (self.flow.extent == self.variance.extent == self.occlusion.extent):
            raise ExtentMismatch("flow, variance and occlusion extents differ")

    @property
    def extent(self) -> ImageExtent:
        return self.flow.extent

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.flow.u, self.flow.v, self.variance.values, self.occlusion.values

    def identical_to(self, other: "FlowBundle") -> bool:
        """Bit-level equality of all four planes (dtype included)."""
        for a, b in zip(self.planes(), other.planes()):
            if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True


FieldLike = Union[ScalarField, np.ndarray]


def in_bounds(p: Point, extent: ImageExtent) -> bool:
    """True iff ``p`` lies on the sampling lattice ``[0, w-1] x [0, h-1]``."""
    return 0 <= p.x <= extent.width - 1 and 0 <= p.y <= extent.height - 1


def in_domain(x, y, extent: ImageExtent):
    """Vectorised test for the pixel-area domain ``[-0.5, w-0.5) x [-0.5, h-0.5)``."""
    return (x >= -0.5) & (x < extent.width - 0.5) & (y >= -0.5) & (y < extent.height - 0.5)


def bilinear(values: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation of ``values`` at coordinates already inside the lattice.

    Coordinates outside ``[0, w-1]`` are clamped onto it (edge replication).
    Lattice points reproduce stored values exactly.
    """
    h, w = values.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    gx = 1.0 - fx
    gy = 1.0 - fy
    vals = values.astype(np.float64, copy=False)
    return (
        gx * gy * vals[y0, x0]
        + fx * gy * vals[y0, x1]
        + gx * fy * vals[y1, x0]
        + fx * fy * vals[y1, x1]
    )


def _values_of(field: FieldLike) -> np.ndarray:
    return field.values if isinstance(field, ScalarField) else np.asarray(field)


def sample_bilinear(field: FieldLike, p: Point) -> float:
    """Sample a scalar field (or one flow channel) at ``p``.

    Raises :class:`OutOfBounds` unless ``p`` is on the lattice, allowing a
    1e-6 tolerance which is clamped away.
    """
    values = _values_of(field)
    h, w = values.shape
    if not (
        -LATTICE_TOL <= p.x <= w - 1 + LATTICE_TOL and -LATTICE_TOL <= p.y <= h - 1 + LATTICE_TOL
    ):
        raise OutOfBounds(f"({p.x}, {p.y}) outside [0, {w - 1}] x [0, {h - 1}]")
    return float(bilinear(values, p.x, p.y))


def advance_point(p: Point, flow: FlowField) -> Point:
    """Move ``p`` by the flow sampled at ``p``.

    Raises :class:`OutOfBounds` when ``p`` is outside the pixel domain; the
    caller keeps ``p`` and decides what that means.
    """
    if not in_domain(p.x, p.y, flow.extent):
        raise OutOfBounds(f"({p.x}, {p.y}) outside the {flow.extent} pixel domain")
    return Point(p.x + float(bilinear(flow.u, p.x, p.y)), p.y + float(bilinear(flow.v, p.x, p.y)))


def advance_points(x: np.ndarray, y: np.ndarray, flow: FlowField):
    """Vectorised :func:`advance_point`.

    Returns ``(new_x, new_y, inside)``; points outside the pixel domain are
    returned unchanged with ``inside`` False.
    """
    inside = in_domain(x, y, flow.extent)
    nx = np.where(inside, x + bilinear(flow.u, x, y), x)
    ny = np.where(inside, y + bilinear(flow.v, x, y), y)
    return nx, ny, inside


def pixel_grid(extent: ImageExtent) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates ``(x, y)`` as float64 arrays of the extent's shape."""
    y, x = np.mgrid[0 : extent.height, 0 : extent.width]
    return x.astype(np.float64), y.astype(np.float64)
