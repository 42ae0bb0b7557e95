"""Combining two independently run trackers.

Tracker A is the one trusted for visibility, tracker B the one trusted for
positions. Strategies:

``a-only`` / ``b-only``
    pass one tracker through unchanged.
``position-b-occlusion-a``
    visibility from A, positions always from B.
``selective-b-position``
    visibility from A, positions from B where B itself predicts the point
    visible and from A elsewhere.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .backend import FlowProvider
from .chain import ChainConfig, ChainState, track
from .errors import ConfigError, ShapeMismatch
from .formats import TrackTable
from .metrics import sample_dense_states

STRATEGIES = ("a-only", "b-only", "position-b-occlusion-a", "selective-b-position")


def combine(pred_a: TrackTable, pred_b: TrackTable, strategy: str) -> TrackTable:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown ensemble strategy {strategy!r}; expected one of {STRATEGIES}")
    if not np.array_equal(pred_a.point_ids, pred_b.point_ids):
        raise ShapeMismatch("trackers disagree on the query points")
    if pred_a.positions.shape != pred_b.positions.shape:
        raise ShapeMismatch(f"tracker outputs differ in shape: {pred_a.positions.shape} vs {pred_b.positions.shape}")
    if not np.array_equal(pred_a.positions[:, 0], pred_b.positions[:, 0]):
        raise ShapeMismatch("trackers disagree on the query positions")

    shape = pred_a.visible.shape
    var_a = pred_a.variance if pred_a.variance is not None else np.zeros(shape)
    var_b = pred_b.variance if pred_b.variance is not None else np.zeros(shape)
    if strategy == "a-only":
        use_b = np.zeros(shape, dtype=bool)
        visible = pred_a.visible
    elif strategy == "b-only":
        use_b = np.ones(shape, dtype=bool)
        visible = pred_b.visible
    elif strategy == "position-b-occlusion-a":
        use_b = np.ones(shape, dtype=bool)
        visible = pred_a.visible
    else:
        use_b = pred_b.visible.astype(bool)
        visible = pred_a.visible

    return TrackTable(
        point_ids=pred_a.point_ids.copy(),
        positions=np.where(use_b[..., None], pred_b.positions, pred_a.positions),
        visible=visible.astype(bool).copy(),
        source=np.where(use_b, "b", "a"),
        variance=np.where(use_b, var_b, var_a),
        extent=pred_a.extent,
    )


def tracks_from_states(
    states: Sequence[ChainState], queries: np.ndarray, occlusion_threshold: float, tag: str = "a"
) -> TrackTable:
    """Read the query trajectories off a dense tracking run."""
    pos, vis, var = sample_dense_states(states, queries, occlusion_threshold)
    return TrackTable(
        point_ids=np.arange(len(pos), dtype=np.int64),
        positions=pos,
        visible=vis,
        source=np.full(vis.shape, tag),
        variance=var,
        extent=states[0].extent,
    )


def predict_tracks(
    provider: FlowProvider, cfg: ChainConfig, num_frames: int, queries: np.ndarray, tag: str = "a"
) -> TrackTable:
    """Run one dense tracker and read off the query trajectories."""
    return tracks_from_states(track(num_frames, provider, cfg), queries, cfg.occlusion_threshold, tag)


def run_pair(
    provider_a: FlowProvider,
    cfg_a: ChainConfig,
    provider_b: FlowProvider,
    cfg_b: ChainConfig,
    num_frames: int,
    queries: np.ndarray,
) -> tuple[TrackTable, TrackTable]:
    """Run trackers A and B as independent passes, concurrently."""
    if provider_a.extent != provider_b.extent:
        raise ShapeMismatch(f"tracker extents differ: {provider_a.extent} vs {provider_b.extent}")
    with ThreadPoolExecutor(max_workers=2) as pool:
        fa = pool.submit(predict_tracks, provider_a, cfg_a, num_frames, queries, "a")
        fb = pool.submit(predict_tracks, provider_b, cfg_b, num_frames, queries, "b")
        return fa.result(), fb.result()
