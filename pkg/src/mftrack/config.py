"""Run configuration files (YAML).

A run names one tracker (``tracker_a``) or two (``tracker_b`` as well), how
their outputs are combined, which reference-frame points to report and how
to evaluate. Every tunable constant is spelled out in :data:`DEFAULT_CONFIG`
so a run's settings can be audited from its config file alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .backend import (
    BACKENDS,
    LOW_CERTAINTY_VARIANCE,
    RAFT_OCCLUSION_THRESHOLD,
    AdapterConfig,
    FileProvider,
    FlowProvider,
    default_adapter_config,
)
from .chain import ChainConfig
from .core import ImageExtent
from .ensemble import STRATEGIES as ENSEMBLE_STRATEGIES
from .errors import ConfigError, MissingPair, UnknownBackend
from .formats import read_tracks
from .metrics import TAPVID_EXTENT, THRESHOLDS
from .synth import DegradationModel, SceneSpec, SynthProvider, grid_queries, model_from_dict, scene_from_dict

TRACKER_BACKENDS = BACKENDS + ("oracle",)
PROVIDER_KIND = {"raft-like": "consecutive-flow", "dkm-like": "wide-baseline-matcher",
                 "roma-like": "wide-baseline-matcher", "oracle": "oracle"}

DEFAULT_CONFIG = """\
# mftrack run configuration. Relative paths are resolved against this file.

frames: null                  # frames to track; null = everything the input provides

queries:                      # reference-frame (frame 1) points to report
  grid_stride: 1              # every n-th pixel in x and y ...
  margin: 0
  file: null                  # ... or the frame-1 positions of a track/GT file

evaluation:
  thresholds: [1, 2, 4, 8, 16]  # position-accuracy thresholds, pixels, strict "<"
  extent: [256, 256]          # rescale to this extent before thresholding; null = native pixels

ensemble: a-only              # a-only | b-only | position-b-occlusion-a | selective-b-position

tracker_a:
  backend: raft-like          # raft-like | dkm-like | roma-like | oracle
  flows: flows                # directory with flow_IIIII_JJJJJ.mftflow (or .flo + .scalars.mftflow)
  scene: null                 # scene file or mapping; replaces `flows` with the analytic provider
  degradation: null           # noise/label-error settings for the analytic provider
  occlusion_threshold: 0.02   # theta_o; 0.02 for raft-like, 0.95 for dkm-like and roma-like
  certainty_threshold: null   # theta_rho; dkm-like uses 0.05, roma-like has no default and must be set
  low_certainty_variance: 1000.0
  max_candidates: 5           # K: candidate gaps per frame (powers of two plus the reference frame)
  strategy: mft               # mft | chain | direct

tracker_b: null               # same keys as tracker_a
"""

_TRACKER_KEYS = {
    "backend", "flows", "scene", "degradation", "occlusion_threshold", "certainty_threshold",
    "low_certainty_variance", "max_candidates", "strategy",
}
_TOP_KEYS = {"frames", "queries", "evaluation", "ensemble", "tracker_a", "tracker_b"}
_PAIR_NAME = re.compile(r"flow_(\d{5})_(\d{5})\.(?:mftflow|flo)$")


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _resolve(base: Path, value: Any) -> Path | None:
    if value is None:
        return None
    p = Path(str(value))
    return p if p.is_absolute() else base / p


def load_yaml(path: Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_scene(path: str | Path) -> SceneSpec:
    data = load_yaml(Path(path))
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: a scene file must be a mapping")
    return scene_from_dict(data)


def frames_in_directory(directory: Path) -> int:
    """Largest target frame index among the flow files in ``directory``."""
    last = 0
    for p in directory.iterdir():
        m = _PAIR_NAME.match(p.name)
        if m:
            last = max(last, int(m.group(2)))
    if last == 0:
        raise MissingPair(f"{directory}: no flow files")
    return last


@dataclass(frozen=True)
class TrackerConfig:
    backend: str = "raft-like"
    flows: Path | None = None
    scene: SceneSpec | None = None
    degradation: DegradationModel | None = None
    occlusion_threshold: float = RAFT_OCCLUSION_THRESHOLD
    certainty_threshold: float | None = None
    low_certainty_variance: float = LOW_CERTAINTY_VARIANCE
    max_candidates: int = 5
    strategy: str = "mft"

    def __post_init__(self) -> None:
        if self.backend not in TRACKER_BACKENDS:
            raise UnknownBackend(f"unknown backend {self.backend!r}; expected one of {TRACKER_BACKENDS}")
        if (self.flows is None) == (self.scene is None):
            raise ConfigError("a tracker needs exactly one of 'flows' and 'scene'")
        if self.degradation is not None and self.scene is None:
            raise ConfigError("'degradation' only applies to a 'scene' tracker")
        if self.backend == "roma-like" and self.certainty_threshold is None:
            raise ConfigError("roma-like needs an explicit certainty_threshold")
        self.chain_config()
        self.adapter_config()

    def chain_config(self) -> ChainConfig:
        return ChainConfig(self.occlusion_threshold, self.max_candidates, self.strategy)

    def adapter_config(self) -> AdapterConfig | None:
        if self.backend == "oracle":
            return None
        base = default_adapter_config(self.backend, self.certainty_threshold)
        return AdapterConfig(
            occlusion_threshold=self.occlusion_threshold,
            certainty_threshold=base.certainty_threshold,
            low_certainty_variance=self.low_certainty_variance,
            adapt_certainty=base.adapt_certainty,
        )

    def build_provider(self) -> FlowProvider:
        if self.scene is not None:
            return SynthProvider(self.scene, self.degradation)
        return FileProvider(self.flows, adapter=self.adapter_config(), kind=PROVIDER_KIND[self.backend])

    def available_frames(self) -> int:
        if self.scene is not None:
            return self.scene.num_frames
        return frames_in_directory(self.flows)


def tracker_from_dict(d: dict, base: Path, where: str = "tracker") -> TrackerConfig:
    _check_keys(d, _TRACKER_KEYS, where)
    backend = d.get("backend", "raft-like")
    if backend not in TRACKER_BACKENDS:
        raise UnknownBackend(f"{where}: unknown backend {backend!r}; expected one of {TRACKER_BACKENDS}")
    theta = d.get("occlusion_threshold")
    if theta is None:
        theta = RAFT_OCCLUSION_THRESHOLD if backend == "oracle" else default_adapter_config(
            backend, d.get("certainty_threshold", 0.5)).occlusion_threshold
    scene = d.get("scene")
    if scene is not None and not isinstance(scene, dict):
        scene = load_scene(_resolve(base, scene))
    elif scene is not None:
        scene = scene_from_dict(scene)
    degradation = d.get("degradation")
    if degradation is not None:
        degradation = model_from_dict(dict(degradation))
    try:
        return TrackerConfig(
            backend=backend,
            flows=_resolve(base, d.get("flows")),
            scene=scene,
            degradation=degradation,
            occlusion_threshold=float(theta),
            certainty_threshold=d.get("certainty_threshold"),
            low_certainty_variance=float(d.get("low_certainty_variance", LOW_CERTAINTY_VARIANCE)),
            max_candidates=int(d.get("max_candidates", 5)),
            strategy=d.get("strategy", "mft"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class QuerySpec:
    grid_stride: int = 1
    margin: int = 0
    file: Path | None = None

    def __post_init__(self) -> None:
        if self.grid_stride < 1 or self.margin < 0:
            raise ConfigError("queries: grid_stride must be >= 1 and margin >= 0")

    def points(self, extent: ImageExtent) -> np.ndarray:
        """Query points as an ``(P, 2)`` array of ``(x, y)`` in frame 1."""
        if self.file is not None:
            return read_tracks(self.file).positions[:, 0].copy()
        return grid_queries(extent, self.grid_stride, self.margin)


@dataclass(frozen=True)
class RunConfig:
    tracker_a: TrackerConfig
    tracker_b: TrackerConfig | None = None
    ensemble: str = "a-only"
    frames: int | None = None
    queries: QuerySpec = field(default_factory=QuerySpec)
    thresholds: tuple[int, ...] = THRESHOLDS
    eval_extent: ImageExtent | None = TAPVID_EXTENT

    def __post_init__(self) -> None:
        if self.ensemble not in ENSEMBLE_STRATEGIES:
            raise ConfigError(f"unknown ensemble {self.ensemble!r}; expected one of {ENSEMBLE_STRATEGIES}")
        if self.ensemble != "a-only" and self.tracker_b is None:
            raise ConfigError(f"ensemble {self.ensemble!r} needs tracker_b")
        if self.frames is not None and self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not self.thresholds or any(t <= 0 for t in self.thresholds):
            raise ConfigError("thresholds must be positive")

    def num_frames(self) -> int:
        if self.frames is not None:
            return self.frames
        n = self.tracker_a.available_frames()
        if self.tracker_b is not None:
            n = min(n, self.tracker_b.available_frames())
        return n


def config_from_dict(d: dict, base: str | Path = ".") -> RunConfig:
    base = Path(base)
    _check_keys(d, _TOP_KEYS, "config")
    if d.get("tracker_a") is None:
        raise ConfigError("config: tracker_a is required")
    q = d.get("queries") or {}
    _check_keys(q, {"grid_stride", "margin", "file"}, "queries")
    ev = d.get("evaluation") or {}
    _check_keys(ev, {"thresholds", "extent"}, "evaluation")
    extent = ev.get("extent", [TAPVID_EXTENT.width, TAPVID_EXTENT.height])
    try:
        return RunConfig(
            tracker_a=tracker_from_dict(d["tracker_a"], base, "tracker_a"),
            tracker_b=None if d.get("tracker_b") is None else tracker_from_dict(d["tracker_b"], base, "tracker_b"),
            ensemble=d.get("ensemble", "a-only"),
            frames=None if d.get("frames") is None else int(d["frames"]),
            queries=QuerySpec(int(q.get("grid_stride", 1)), int(q.get("margin", 0)), _resolve(base, q.get("file"))),
            thresholds=tuple(float(t) if float(t) != int(t) else int(t) for t in ev.get("thresholds", THRESHOLDS)),
            eval_extent=None if extent is None else ImageExtent(int(extent[0]), int(extent[1])),
        )
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: a run config must be a mapping")
    return config_from_dict(data, path.parent)


def default_config_dict() -> dict:
    return yaml.safe_load(DEFAULT_CONFIG)
