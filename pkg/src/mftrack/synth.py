"""Synthetic scenes with exact flow, occlusion and point-track ground truth.

A scene is an affinely moving background plus a stack of rigid objects
(rectangles or ellipses); later objects are nearer to the camera. Each layer
has one 2x3 matrix per frame mapping layer coordinates to image coordinates,
so the motion of a point between frames ``i`` and ``j`` is
``M_j @ inv(M_i)`` of the layer that owns it in frame ``i``.

Degraded flows add seeded Gaussian noise whose scale grows linearly with the
temporal gap and flip occlusion labels at configurable rates (see
:mod:`mftrack.rng` for the generator). Optionally, part of the noise is tied
to scene content so that the same surface patches are hard to match in every
frame pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .backend import FunctionProvider
from .core import FlowBundle, FlowField, ImageExtent, Point, ScalarField, in_bounds, in_domain, pixel_grid
from .errors import ConfigError, InvalidFrames, OutOfBounds
from .formats import TrackTable
from .rng import PairStream, box_muller, hash_uniform

SHAPES = ("rectangle", "ellipse")
VARIANCE_REPORTS = ("honest", "miscalibrated")


def motion_matrices(
    num_frames: int,
    velocity: Sequence[float] = (0.0, 0.0),
    rotation: float = 0.0,
    scale: float = 1.0,
    center: Sequence[float] = (0.0, 0.0),
    offset: Sequence[float] = (0.0, 0.0),
) -> np.ndarray:
    """Per-frame 2x3 similarity matrices for constant-rate motion.

    Frame ``t`` (1-based) rotates by ``(t-1) * rotation`` and scales by
    ``scale ** (t-1)`` about ``center``, then translates by
    ``offset + (t-1) * velocity``.
    """
    mats = np.empty((num_frames, 2, 3))
    cx, cy = center
    for k in range(num_frames):
        c, s = math.cos(k * rotation), math.sin(k * rotation)
        z = scale**k
        a = np.array([[z * c, -z * s], [z * s, z * c]])
        t = np.array([cx + offset[0] + k * velocity[0], cy + offset[1] + k * velocity[1]])
        mats[k, :, :2] = a
        mats[k, :, 2] = t - a @ np.array([cx, cy])
    return mats


def _check_affines(mats: np.ndarray, num_frames: int, what: str) -> np.ndarray:
    mats = np.asarray(mats, dtype=np.float64)
    if mats.shape != (num_frames, 2, 3):
        raise ConfigError(f"{what}: expected {num_frames} 2x3 matrices, got shape {mats.shape}")
    if not np.isfinite(mats).all():
        raise ConfigError(f"{what}: non-finite motion")
    det = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    if (np.abs(det) < 1e-12).any():
        raise ConfigError(f"{what}: singular motion matrix")
    return mats


def _invert_affine(m: np.ndarray) -> np.ndarray:
    a, b, tx = m[0]
    c, d, ty = m[1]
    det = a * d - b * c
    ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
    return np.array([[ia, ib, -(ia * tx + ib * ty)], [ic, id_, -(ic * tx + id_ * ty)]])


def _apply(m: np.ndarray, x, y):
    return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    """A rigid shape given in layer coordinates.

    ``size`` is the full width and height; ``motion`` holds one 2x3 matrix per
    frame.
    """

    shape: str
    center: tuple[float, float]
    size: tuple[float, float]
    motion: np.ndarray

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if not (self.size[0] > 0 and self.size[1] > 0):
            raise ConfigError("object size must be positive")

    def contains(self, x, y):
        """Inside test in layer coordinates."""
        dx = (x - self.center[0]) / (0.5 * self.size[0])
        dy = (y - self.center[1]) / (0.5 * self.size[1])
        if self.shape == "rectangle":
            return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)
        return dx * dx + dy * dy <= 1.0


@dataclass(frozen=True, eq=False)
class SceneSpec:
    extent: ImageExtent
    num_frames: int
    background: np.ndarray
    objects: tuple[ObjectSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.num_frames < 1:
            raise ConfigError("a scene needs at least one frame")
        object.__setattr__(self, "background", _check_affines(self.background, self.num_frames, "background"))
        for k, obj in enumerate(self.objects):
            object.__setattr__(obj, "motion", _check_affines(obj.motion, self.num_frames, f"object {k}"))
        object.__setattr__(self, "objects", tuple(self.objects))

    def layer_motion(self, layer: int) -> np.ndarray:
        return self.background if layer < 0 else self.objects[layer].motion

    def check_frames(self, i: int, j: int) -> None:
        if not 1 <= i < j <= self.num_frames:
            raise InvalidFrames(f"need 1 <= i < j <= {self.num_frames}, got ({i}, {j})")


@dataclass(frozen=True)
class DegradationModel:
    """Noise and labelling errors applied on top of the exact flow.

    Per-axis noise standard deviation for the pair ``(i, j)`` is
    ``noise_base + noise_slope * |j - i|`` pixels.

    ``difficulty_coherence`` is the probability that a pixel's noise radius
    (and with it its false-occlusion draw) comes from a fixed per-surface-patch
    difficulty value instead of a fresh draw, so hard patches are hard and
    spuriously flagged in most frame pairs. Patches are
    ``difficulty_cell``-pixel squares in the coordinates of the layer that
    owns the point, so a patch keeps its character as it moves. Marginal
    noise and flag rates are unchanged by this setting.
    """

    noise_base: float = 0.0
    noise_slope: float = 0.0
    variance_report: str = "honest"
    reported_variance: float = 1.0
    false_occlusion_rate: float = 0.0
    missed_occlusion_rate: float = 0.0
    seed: int = 0
    difficulty_coherence: float = 0.0
    difficulty_cell: float = 8.0

    def __post_init__(self) -> None:
        if self.noise_base < 0 or self.noise_slope < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.variance_report not in VARIANCE_REPORTS:
            raise ConfigError(f"unknown variance_report {self.variance_report!r}")
        if self.reported_variance < 0:
            raise ConfigError("reported_variance must be non-negative")
        for rate in (self.false_occlusion_rate, self.missed_occlusion_rate):
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"occlusion error rate {rate} not in [0, 1]")
        if not 0.0 <= self.difficulty_coherence <= 1.0:
            raise ConfigError("difficulty_coherence must be in [0, 1]")
        if not self.difficulty_cell > 0:
            raise ConfigError("difficulty_cell must be positive")

    def noise_scale(self, i: int, j: int) -> float:
        return self.noise_base + self.noise_slope * abs(j - i)


def layer_at(scene: SceneSpec, x, y, frame: int, above: Any = -1) -> np.ndarray:
    """Index of the nearest layer covering each point in ``frame`` (-1 = background).

    Only objects with index greater than ``above`` are tested.
    """
    x = np.asarray(x, dtype=np.float64)
    owner = np.full(x.shape, -1, dtype=np.int64)
    above = np.broadcast_to(np.asarray(above), x.shape)
    for k, obj in enumerate(scene.objects):
        lx, ly = _apply(_invert_affine(obj.motion[frame - 1]), x, y)
        owner = np.where(obj.contains(lx, ly) & (k > above), k, owner)
    return owner


def layer_coordinates(scene: SceneSpec, x, y, frame: int):
    """Owning layer and layer coordinates of image points in ``frame``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    owner = layer_at(scene, x, y, frame)
    lx = np.empty_like(x)
    ly = np.empty_like(y)
    for layer in np.unique(owner):
        sel = owner == layer
        lx[sel], ly[sel] = _apply(_invert_affine(scene.layer_motion(int(layer))[frame - 1]), x[sel], y[sel])
    return owner, lx, ly


def transfer(scene: SceneSpec, x, y, i: int, j: int):
    """Move points seen in frame ``i`` to frame ``j`` analytically.

    Returns ``(x_j, y_j, occluded, owner)``; a point is occluded in ``j``
    when it leaves the pixel domain or a nearer object covers it.
    """
    owner, lx, ly = layer_coordinates(scene, x, y, i)
    qx = np.empty_like(lx)
    qy = np.empty_like(ly)
    for layer in np.unique(owner):
        sel = owner == layer
        qx[sel], qy[sel] = _apply(scene.layer_motion(int(layer))[j - 1], lx[sel], ly[sel])
    covered = layer_at(scene, qx, qy, j, above=owner) >= 0
    occluded = covered | ~in_domain(qx, qy, scene.extent)
    return qx, qy, occluded, owner


def gt_flow(scene: SceneSpec, i: int, j: int) -> FlowBundle:
    """Exact flow ``i -> j`` with binary occlusion and zero variance (float64)."""
    scene.check_frames(i, j)
    x, y = pixel_grid(scene.extent)
    qx, qy, occluded, _ = transfer(scene, x, y, i, j)
    ext = scene.extent
    return FlowBundle(
        FlowField(ext, qx - x, qy - y),
        ScalarField(ext, np.zeros(ext.shape), "variance"),
        ScalarField(ext, occluded.astype(np.float64), "occlusion"),
    )


def degraded_flow(scene: SceneSpec, i: int, j: int, model: DegradationModel) -> FlowBundle:
    """``gt_flow`` with seeded noise and occlusion label errors.

    Random draws for the pair, in order: uniform blocks ``u1`` and ``u2``
    (``n`` each, row-major pixel order) feeding one Box-Muller transform for
    the u/v noise, then ``n`` uniforms for missed occlusions, then (only when
    ``difficulty_coherence > 0``) ``n`` uniforms choosing which pixels take
    their ``u1`` from :func:`patch_difficulty` instead.

    False occlusions are not drawn independently: a visible pixel is
    flagged when ``1 - u1 < false_occlusion_rate``, i.e. exactly when its
    noise vector lies in the top ``false_occlusion_rate`` tail of radii. This
    keeps the rate exact while making spurious occlusion flags coincide with
    the worst flow errors, as they do for real estimators.
    """
    gt = gt_flow(scene, i, j)
    ext = scene.extent
    stream = PairStream(model.seed, i, j)
    u1, u2 = stream.uniform(ext.size), stream.uniform(ext.size)
    missed_draw = stream.uniform(ext.size).reshape(ext.shape)
    if model.difficulty_coherence > 0:
        shared = stream.uniform(ext.size) < model.difficulty_coherence
        u1 = np.where(shared, patch_difficulty(scene, i, model).ravel(), u1)
    nu, nv, tail = box_muller(u1, u2)
    sigma = model.noise_scale(i, j)
    u = gt.flow.u + sigma * nu.reshape(ext.shape)
    v = gt.flow.v + sigma * nv.reshape(ext.shape)
    gt_occ = gt.occlusion.values
    occ = np.where((gt_occ == 0) & (tail.reshape(ext.shape) < model.false_occlusion_rate), 1.0, gt_occ)
    occ = np.where((gt_occ == 1) & (missed_draw < model.missed_occlusion_rate), 0.0, occ)
    reported = sigma * sigma if model.variance_report == "honest" else model.reported_variance
    return FlowBundle(
        FlowField(ext, u, v),
        ScalarField(ext, np.full(ext.shape, float(reported)), "variance"),
        ScalarField(ext, occ, "occlusion"),
    )


def patch_difficulty(scene: SceneSpec, frame: int, model: DegradationModel) -> np.ndarray:
    """Fixed difficulty in ``[0, 1)`` of the surface patch under each pixel of ``frame``."""
    x, y = pixel_grid(scene.extent)
    owner, lx, ly = layer_coordinates(scene, x, y, frame)
    cell = model.difficulty_cell
    return hash_uniform(model.seed, owner, np.floor(lx / cell), np.floor(ly / cell))


class SynthProvider(FunctionProvider):
    """Oracle provider backed by a scene, optionally degraded.

    Bundles are cast to ``dtype`` (float32 by default) so they match what a
    file-backed provider reading the same pairs would return bit for bit.
    """

    def __init__(self, scene: SceneSpec, model: DegradationModel | None = None, dtype=np.float32):
        self.scene = scene
        self.model = model
        self.dtype = np.dtype(dtype)
        super().__init__(scene.extent, self._make, kind="oracle")

    def _make(self, i: int, j: int) -> FlowBundle:
        bundle = gt_flow(self.scene, i, j) if self.model is None else degraded_flow(self.scene, i, j, self.model)
        return cast_bundle(bundle, self.dtype)


def cast_bundle(bundle: FlowBundle, dtype) -> FlowBundle:
    ext = bundle.extent
    u, v, var, occ = (np.asarray(p, dtype=dtype) for p in bundle.planes())
    return FlowBundle(FlowField(ext, u, v), ScalarField(ext, var, "variance"), ScalarField(ext, occ, "occlusion"))


def gt_tracks(scene: SceneSpec, queries: Sequence[Point] | np.ndarray) -> TrackTable:
    """Exact trajectories and visibility for query points given in frame 1."""
    q = np.asarray([(p.x, p.y) for p in queries] if len(queries) and isinstance(queries[0], Point) else queries,
                   dtype=np.float64).reshape(-1, 2)
    for x, y in q:
        if not in_bounds(Point(float(x), float(y)), scene.extent):
            raise OutOfBounds(f"query ({x}, {y}) outside frame 1")
    n = scene.num_frames
    pos = np.empty((len(q), n, 2))
    vis = np.empty((len(q), n), dtype=bool)
    pos[:, 0] = q
    vis[:, 0] = True
    for t in range(2, n + 1):
        qx, qy, occluded, _ = transfer(scene, q[:, 0], q[:, 1], 1, t)
        pos[:, t - 1, 0] = q[:, 0] + (qx - q[:, 0])
        pos[:, t - 1, 1] = q[:, 1] + (qy - q[:, 1])
        vis[:, t - 1] = ~occluded
    return TrackTable(np.arange(len(q), dtype=np.int64), pos, vis, extent=scene.extent)


def grid_queries(extent: ImageExtent, stride: int = 1, margin: int = 0) -> np.ndarray:
    """Query points on a regular pixel grid, as an ``(P, 2)`` array of ``(x, y)``."""
    xs = np.arange(margin, extent.width - margin, stride, dtype=np.float64)
    ys = np.arange(margin, extent.height - margin, stride, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


# ---------------------------------------------------------------------------
# Scene description files
# ---------------------------------------------------------------------------


def _motion_from(d: dict, num_frames: int, default_center: Sequence[float]) -> np.ndarray:
    if "matrices" in d:
        return np.asarray(d["matrices"], dtype=np.float64)
    return motion_matrices(
        num_frames,
        velocity=d.get("velocity", (0.0, 0.0)),
        rotation=float(d.get("rotation", 0.0)),
        scale=float(d.get("scale", 1.0)),
        center=d.get("center", default_center),
        offset=d.get("offset", (0.0, 0.0)),
    )


def scene_from_dict(d: dict) -> SceneSpec:
    """Build a scene from its text-config form (see ``examples/scene.yaml`` in the README)."""
    try:
        w, h = d["extent"]
        n = int(d["frames"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene needs 'extent: [w, h]' and 'frames': {exc}") from None
    extent = ImageExtent(int(w), int(h))
    image_center = ((extent.width - 1) / 2, (extent.height - 1) / 2)
    background = _motion_from(d.get("background") or {}, n, image_center)
    objects = []
    for k, od in enumerate(d.get("objects") or []):
        try:
            center = tuple(float(c) for c in od["center"])
            size = tuple(float(s) for s in od["size"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"object {k} needs 'center' and 'size': {exc}") from None
        motion = _motion_from(od.get("motion") or {}, n, center)
        objects.append(ObjectSpec(od.get("shape", "rectangle"), center, size, motion))
    return SceneSpec(extent, n, background, tuple(objects))


def model_from_dict(d: dict) -> DegradationModel:
    known = DegradationModel.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown degradation keys {sorted(unknown)}")
    return DegradationModel(**d)


ACCEPTANCE_SCENE = {
    "extent": [64, 64],
    "frames": 48,
    "background": {"velocity": [0.35, 0.2], "rotation": 0.003, "scale": 1.002},
    "objects": [
        {
            "shape": "rectangle",
            "center": [8.0, 22.0],
            "size": [10.0, 14.0],
            "motion": {"velocity": [2.0, 0.3], "rotation": 0.01},
        },
        {
            "shape": "ellipse",
            "center": [54.0, 10.0],
            "size": [12.0, 10.0],
            "motion": {"velocity": [-1.6, 1.7]},
        },
    ],
}

ACCEPTANCE_DEGRADATION = {
    "noise_base": 0.1,
    "noise_slope": 0.15,
    "variance_report": "honest",
    "false_occlusion_rate": 0.05,
    "missed_occlusion_rate": 0.05,
    "difficulty_coherence": 0.9,
    "difficulty_cell": 8.0,
}

ACCEPTANCE_SEEDS = (0, 1, 2)


def acceptance_scene() -> SceneSpec:
    """The fixed 64x64, 48-frame scene used by the acceptance experiments."""
    return scene_from_dict(ACCEPTANCE_SCENE)


def acceptance_model(seed: int, **overrides) -> DegradationModel:
    return DegradationModel(**{**ACCEPTANCE_DEGRADATION, "seed": seed, **overrides})
