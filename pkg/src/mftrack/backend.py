"""Flow providers and the adaptation of matcher certainty into variance/occlusion.

A provider is anything with ``extent`` and ``provide(i, j) -> FlowBundle``
for 1-based frame indices ``i < j``. Matcher-style backends only report a
certainty ``rho``; they are turned into the (flow, variance, occlusion) form by
``o = 1 - rho`` and a two-level variance (0 when ``rho`` exceeds the
certainty threshold, ``low_certainty_variance`` otherwise).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, runtime_checkable

import numpy as np

from .core import FlowBundle, FlowField, ImageExtent, ScalarField
from .errors import ConfigError, ExtentMismatch, InvalidFrames, MissingPair, UnknownBackend
from .formats import FlowPack, read_flo, read_flowpack

PROVIDER_KINDS = ("consecutive-flow", "wide-baseline-matcher", "oracle")
BACKENDS = ("raft-like", "dkm-like", "roma-like")

RAFT_OCCLUSION_THRESHOLD = 0.02
MATCHER_OCCLUSION_THRESHOLD = 0.95
DKM_CERTAINTY_THRESHOLD = 0.05
LOW_CERTAINTY_VARIANCE = 1000.0


@dataclass(frozen=True)
class AdapterConfig:
    """Per-backend thresholds.

    ``certainty_threshold`` is ``None`` for backends that report variance and
    occlusion natively; matcher backends must set it before adapting.
    """

    occlusion_threshold: float
    certainty_threshold: float | None = None
    low_certainty_variance: float = LOW_CERTAINTY_VARIANCE
    adapt_certainty: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.occlusion_threshold <= 1.0:
            raise ConfigError(f"occlusion_threshold {self.occlusion_threshold} not in [0, 1]")
        if self.certainty_threshold is not None and not 0.0 <= self.certainty_threshold <= 1.0:
            raise ConfigError(f"certainty_threshold {self.certainty_threshold} not in [0, 1]")
        if not self.low_certainty_variance > 0:
            raise ConfigError("low_certainty_variance must be positive")


@dataclass(frozen=True)
class FlowRequest:
    source: int
    target: int

    def __post_init__(self) -> None:
        if not 1 <= self.source < self.target:
            raise InvalidFrames(f"need 1 <= i < j, got ({self.source}, {self.target})")


def default_adapter_config(kind: str, certainty_threshold: float | None = None) -> AdapterConfig:
    """Thresholds used for each backend family.

    ``roma-like`` has no published certainty threshold, so it is left unset
    unless given; adapting with it unset raises :class:`ConfigError`.
    """
    if kind == "raft-like":
        return AdapterConfig(occlusion_threshold=RAFT_OCCLUSION_THRESHOLD)
    if kind == "dkm-like":
        theta = DKM_CERTAINTY_THRESHOLD if certainty_threshold is None else certainty_threshold
        return AdapterConfig(MATCHER_OCCLUSION_THRESHOLD, theta, adapt_certainty=True)
    if kind == "roma-like":
        return AdapterConfig(MATCHER_OCCLUSION_THRESHOLD, certainty_threshold, adapt_certainty=True)
    raise UnknownBackend(f"unknown backend {kind!r}; expected one of {BACKENDS}")


def certainty_to_occlusion(certainty: ScalarField) -> ScalarField:
    certainty.require_role("certainty")
    return ScalarField(certainty.extent, 1.0 - certainty.values, "occlusion")


def certainty_to_variance(certainty: ScalarField, cfg: AdapterConfig) -> ScalarField:
    certainty.require_role("certainty")
    if cfg.certainty_threshold is None:
        raise ConfigError("certainty_threshold must be configured for this backend")
    reliable = certainty.values > cfg.certainty_threshold
    values = np.where(reliable, 0.0, cfg.low_certainty_variance).astype(certainty.values.dtype)
    return ScalarField(certainty.extent, values, "variance")


def adapt_matcher(flow: FlowField, certainty: ScalarField, cfg: AdapterConfig) -> FlowBundle:
    """Turn a matcher's (flow, certainty) output into a chainable bundle."""
    return FlowBundle(flow, certainty_to_variance(certainty, cfg), certainty_to_occlusion(certainty))


@runtime_checkable
class FlowProvider(Protocol):
    extent: ImageExtent

    def provide(self, i: int, j: int) -> FlowBundle: ...


def _check_extent(bundle: FlowBundle, extent: ImageExtent, i: int, j: int) -> FlowBundle:
    if bundle.extent != extent:
        raise ExtentMismatch(f"pair ({i}, {j}) has extent {bundle.extent}, sequence is {extent}")
    return bundle


class ArrayProvider:
    """In-memory provider over a mapping ``(i, j) -> FlowBundle``."""

    kind = "oracle"

    def __init__(self, extent: ImageExtent, bundles: Mapping[tuple[int, int], FlowBundle]):
        self.extent = extent
        self._bundles = dict(bundles)

    def provide(self, i: int, j: int) -> FlowBundle:
        FlowRequest(i, j)
        try:
            bundle = self._bundles[(i, j)]
        except KeyError:
            raise MissingPair(f"no flow for pair ({i}, {j})") from None
        return _check_extent(bundle, self.extent, i, j)


class FunctionProvider:
    """Provider computing bundles on demand with ``fn(i, j)``, memoised per pair."""

    def __init__(self, extent: ImageExtent, fn: Callable[[int, int], FlowBundle], kind: str = "oracle"):
        self.extent = extent
        self.kind = kind
        self._fn = fn
        self._cache: dict[tuple[int, int], FlowBundle] = {}
        self._lock = threading.Lock()

    def provide(self, i: int, j: int) -> FlowBundle:
        FlowRequest(i, j)
        with self._lock:
            hit = self._cache.get((i, j))
        if hit is not None:
            return hit
        bundle = _check_extent(self._fn(i, j), self.extent, i, j)
        with self._lock:
            return self._cache.setdefault((i, j), bundle)


def pair_stem(i: int, j: int) -> str:
    return f"flow_{i:05d}_{j:05d}"


class FileProvider:
    """Reads precomputed backend outputs from a directory.

    For the pair ``(i, j)`` it looks for ``flow_{i:05d}_{j:05d}.mftflow``. If
    that is absent it tries ``flow_...flo`` plus a ``flow_....scalars.mftflow``
    sidecar carrying the scalar planes (its flow planes are ignored). Packs
    holding a certainty plane are adapted with ``adapter``; otherwise the
    variance and occlusion planes are used as they are.
    """

    def __init__(
        self,
        directory: str | Path,
        extent: ImageExtent | None = None,
        adapter: AdapterConfig | None = None,
        kind: str = "consecutive-flow",
    ):
        if kind not in PROVIDER_KINDS:
            raise UnknownBackend(f"unknown provider kind {kind!r}")
        self.directory = Path(directory)
        self.adapter = adapter
        self.kind = kind
        if extent is None:
            extent = self._probe_extent()
        self.extent = extent

    def _probe_extent(self) -> ImageExtent:
        for path in sorted(self.directory.glob("flow_*.mftflow")):
            return read_flowpack(path).extent
        for path in sorted(self.directory.glob("flow_*.flo")):
            return read_flo(path).extent
        raise MissingPair(f"{self.directory}: no flow files to infer the extent from")

    def provide(self, i: int, j: int) -> FlowBundle:
        FlowRequest(i, j)
        stem = pair_stem(i, j)
        pack_path = self.directory / f"{stem}.mftflow"
        flo_path = self.directory / f"{stem}.flo"
        sidecar = self.directory / f"{stem}.scalars.mftflow"
        if pack_path.exists():
            pack = read_flowpack(pack_path)
            flow = pack.flow()
        elif flo_path.exists() and sidecar.exists():
            flow = read_flo(flo_path)
            pack = read_flowpack(sidecar)
            if pack.extent != flow.extent:
                raise ExtentMismatch(f"{flo_path} and its sidecar disagree on extent")
        else:
            raise MissingPair(f"{self.directory}: no flow for pair ({i}, {j})")
        return _check_extent(self._to_bundle(flow, pack), self.extent, i, j)

    def _to_bundle(self, flow: FlowField, pack: FlowPack) -> FlowBundle:
        if "certainty" in pack.planes and (self.adapter is None or self.adapter.adapt_certainty):
            if self.adapter is None:
                raise ConfigError("certainty plane found but no adapter configured")
            rho = ScalarField(pack.extent, pack.planes["certainty"], "certainty")
            return adapt_matcher(flow, rho, self.adapter)
        bundle = pack.bundle()
        return FlowBundle(flow, bundle.variance, bundle.occlusion)
