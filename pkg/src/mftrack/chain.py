"""Multi-flow chaining tracker.

For every reference pixel the tracker keeps its current position together
with an accumulated flow variance and occlusion score. At frame ``j`` it
considers a handful of earlier frames ``i = j - delta`` (logarithmically
spaced deltas plus the reference frame), extends the stored result for each
``i`` by the flow ``i -> j`` sampled at the pixel's position in ``i``, and
keeps the extension with the lowest accumulated variance among those that
are neither occluded nor out of the image.

Variances add along a chain, occlusion scores combine with ``max``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Mapping, MutableMapping

import numpy as np

from .backend import FlowProvider
from .core import ImageExtent, Point, bilinear, in_bounds, in_domain, pixel_grid
from .errors import ConfigError, ExtentMismatch, InvalidFrame, MissingState, OutOfBounds

log = logging.getLogger(__name__)

STRATEGIES = ("mft", "chain", "direct")


@dataclass(frozen=True)
class ChainConfig:
    """Tracker settings.

    ``strategy`` selects the candidate schedule: ``mft`` uses the
    logarithmic schedule, ``chain`` only the previous frame, ``direct`` only
    the reference frame. Points leaving the image are always treated as
    occluded.
    """

    occlusion_threshold: float
    max_candidates: int = 5
    strategy: str = "mft"

    def __post_init__(self) -> None:
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be >= 1")
        if not 0.0 <= self.occlusion_threshold <= 1.0:
            raise ConfigError(f"occlusion_threshold {self.occlusion_threshold} not in [0, 1]")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def deltas(self, j: int) -> list[int]:
        if self.strategy == "chain":
            if j < 2:
                raise InvalidFrame(f"frame {j} has no predecessor")
            return [1]
        if self.strategy == "direct":
            return delta_schedule(j, 1)
        return delta_schedule(j, self.max_candidates)


@dataclass(frozen=True, eq=False)
class ChainState:
    """Dense tracking result for frame ``frame`` relative to frame 1.

    ``source_frame`` records which earlier frame the winning chain came from
    (the frame itself for the reference state).
    """

    frame: int
    x: np.ndarray
    y: np.ndarray
    variance: np.ndarray
    occlusion: np.ndarray
    source_frame: np.ndarray

    def __post_init__(self) -> None:
        shape = self.x.shape
        for name in ("y", "variance", "occlusion", "source_frame"):
            if getattr(self, name).shape != shape:
                raise ExtentMismatch(f"ChainState.{name} shape differs from positions")
        for name in ("x", "y", "variance", "occlusion", "source_frame"):
            getattr(self, name).flags.writeable = False

    @property
    def extent(self) -> ImageExtent:
        return ImageExtent.of(self.x)

    @classmethod
    def identity(cls, extent: ImageExtent) -> "ChainState":
        x, y = pixel_grid(extent)
        zeros = np.zeros(extent.shape)
        return cls(1, x, y, zeros, zeros.copy(), np.ones(extent.shape, dtype=np.int64))

    def displacement(self) -> tuple[np.ndarray, np.ndarray]:
        """Long-term flow from frame 1: position minus the reference pixel."""
        x0, y0 = pixel_grid(self.extent)
        return self.x - x0, self.y - y0


def delta_schedule(j: int, max_candidates: int) -> list[int]:
    """Ascending, de-duplicated temporal gaps to consider at frame ``j``.

    Powers of two ``1, 2, 4, ...`` (at most ``max_candidates - 1`` of them,
    each strictly smaller than ``j - 1``) followed by ``j - 1``, the jump
    straight from the reference frame.
    """
    if j < 2:
        raise InvalidFrame(f"frame {j} has no predecessor (frames are 1-based)")
    if max_candidates < 1:
        raise ConfigError("max_candidates must be >= 1")
    powers = [2**k for k in range(max_candidates - 1) if 2**k < j - 1]
    return powers + [j - 1]


def retained_frames(j: int, max_candidates: int) -> set[int]:
    """Frames whose states may still be read by some frame after ``j``."""
    if max_candidates < 2:
        return {1}
    horizon = 2 ** (max_candidates - 2)
    return {1} | set(range(max(1, j - horizon + 1), j + 1))


def chain_variance(prefix: float, step: float) -> float:
    return prefix + step


def chain_occlusion(prefix: float, step: float) -> float:
    return max(prefix, step)


def score_candidate(variance: float, occlusion: float, occlusion_threshold: float, left_bounds: bool) -> float:
    if left_bounds or occlusion > occlusion_threshold:
        return -np.inf
    return -variance


@dataclass(eq=False)
class CandidateSet:
    """All candidate extensions for one frame, stacked along axis 0."""

    sources: list[int]
    x: np.ndarray
    y: np.ndarray
    variance: np.ndarray
    occlusion: np.ndarray
    score: np.ndarray


def evaluate_candidates(
    history: Mapping[int, ChainState], j: int, provider: FlowProvider, cfg: ChainConfig
) -> CandidateSet:
    """Extend the stored state of each scheduled earlier frame to frame ``j``."""
    deltas = cfg.deltas(j)
    sources, xs, ys, vs, os_, ss = [], [], [], [], [], []
    for delta in deltas:
        i = j - delta
        try:
            prev = history[i]
        except KeyError:
            raise MissingState(f"state for frame {i} is needed at frame {j}") from None
        bundle = provider.provide(i, j)
        if bundle.extent != prev.extent:
            raise ExtentMismatch(f"flow ({i}, {j}) is {bundle.extent}, tracker is {prev.extent}")
        inside_i = in_domain(prev.x, prev.y, bundle.extent)
        u, v, var, occ = (bilinear(plane, prev.x, prev.y) for plane in bundle.planes())
        nx = np.where(inside_i, prev.x + u, prev.x)
        ny = np.where(inside_i, prev.y + v, prev.y)
        stayed = inside_i & in_domain(nx, ny, bundle.extent)
        cvar = np.where(inside_i, prev.variance + var, np.inf)
        cocc = np.where(stayed, np.maximum(prev.occlusion, occ), 1.0)
        score = np.where(~stayed | (cocc > cfg.occlusion_threshold), -np.inf, -cvar)
        sources.append(i)
        xs.append(nx)
        ys.append(ny)
        vs.append(cvar)
        os_.append(cocc)
        ss.append(score)
    return CandidateSet(sources, np.stack(xs), np.stack(ys), np.stack(vs), np.stack(os_), np.stack(ss))


def select_candidates(cands: CandidateSet) -> np.ndarray:
    """Index of the winning candidate per pixel.

    Highest score wins; equal scores go to the longer jump. Where every score
    is ``-inf`` the candidate with the lowest occlusion (then variance, then
    longer jump) is kept so the pixel still carries a position.
    """
    # visit the longest jump (smallest source frame) first; strict comparisons keep it on ties
    order = np.argsort(np.asarray(cands.sources), kind="stable")
    first = order[0]
    best = np.full(cands.score.shape[1:], first, dtype=np.intp)
    best_score = cands.score[first].copy()
    fb = best.copy()
    fb_occ = cands.occlusion[first].copy()
    fb_var = cands.variance[first].copy()
    for k in order[1:]:
        s = cands.score[k]
        take = s > best_score
        best = np.where(take, k, best)
        best_score = np.where(take, s, best_score)
        o, v = cands.occlusion[k], cands.variance[k]
        take_fb = (o < fb_occ) | ((o == fb_occ) & (v < fb_var))
        fb = np.where(take_fb, k, fb)
        fb_occ = np.where(take_fb, o, fb_occ)
        fb_var = np.where(take_fb, v, fb_var)
    return np.where(np.isneginf(best_score), fb, best)


def update_frame(
    history: Mapping[int, ChainState], j: int, provider: FlowProvider, cfg: ChainConfig
) -> ChainState:
    cands = evaluate_candidates(history, j, provider, cfg)
    idx = select_candidates(cands)[None]

    def pick(stack: np.ndarray) -> np.ndarray:
        return np.take_along_axis(stack, idx, axis=0)[0]

    sources = np.asarray(cands.sources, dtype=np.int64)
    return ChainState(
        frame=j,
        x=pick(cands.x),
        y=pick(cands.y),
        variance=pick(cands.variance),
        occlusion=pick(cands.occlusion),
        source_frame=sources[idx[0]],
    )


class Tracker:
    """Frame-by-frame driver holding only the states future frames can reach.

    >>> tracker = Tracker(provider, ChainConfig(occlusion_threshold=0.02))
    >>> for state in tracker.run(num_frames): ...
    """

    def __init__(self, provider: FlowProvider, cfg: ChainConfig):
        self.provider = provider
        self.cfg = cfg
        self.history: MutableMapping[int, ChainState] = {}
        self.frame = 0

    def step(self) -> ChainState:
        if self.frame == 0:
            state = ChainState.identity(self.provider.extent)
        else:
            state = update_frame(self.history, self.frame + 1, self.provider, self.cfg)
        self.frame = state.frame
        self.history[state.frame] = state
        keep = self._retained(state.frame)
        for f in [f for f in self.history if f not in keep]:
            del self.history[f]
        return state

    def _retained(self, j: int) -> set[int]:
        if self.cfg.strategy == "chain":
            return {1, j}
        if self.cfg.strategy == "direct":
            return {1}
        return retained_frames(j, self.cfg.max_candidates)

    def run(self, num_frames: int) -> Iterator[ChainState]:
        while self.frame < num_frames:
            state = self.step()
            log.debug("frame %d tracked", state.frame)
            yield state


def track(num_frames: int, provider: FlowProvider, cfg: ChainConfig) -> list[ChainState]:
    """Track all reference pixels through frames ``1..num_frames``."""
    if num_frames < 1:
        raise InvalidFrame("a sequence needs at least one frame")
    return list(Tracker(provider, cfg).run(num_frames))


def is_occluded(state: ChainState, p: Point, occlusion_threshold: float) -> bool:
    if not in_bounds(p, state.extent):
        raise OutOfBounds(f"({p.x}, {p.y}) outside the reference frame {state.extent}")
    return float(bilinear(state.occlusion, p.x, p.y)) > occlusion_threshold
