"""TAP-Vid style evaluation in the "first" query mode.

Every track is queried in frame 1, so frame 1 is excluded from all counts.
Positions are compared after rescaling both prediction and ground truth from
the source extent to the evaluation extent (TAP-Vid uses 256x256); an error
counts as within threshold ``t`` when it is strictly below ``t`` pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import ChainState
from .core import ImageExtent, Point, bilinear, in_bounds
from .errors import EmptyEvalSet, MissingGT, OutOfBounds, ShapeMismatch
from .formats import TrackTable

THRESHOLDS = (1, 2, 4, 8, 16)
TAPVID_EXTENT = ImageExtent(256, 256)


@dataclass(eq=False)
class TrackRecord:
    """One query point: predicted and (optionally) ground-truth trajectory.

    Arrays are indexed by frame, frame 1 first.
    """

    query: Point
    positions: np.ndarray
    visible: np.ndarray
    gt_positions: np.ndarray | None = None
    gt_visible: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return len(self.visible)


def records_from_tables(pred: TrackTable, gt: TrackTable | None = None) -> list[TrackRecord]:
    """Pair predicted and ground-truth tables by point id."""
    if gt is not None:
        if sorted(pred.point_ids.tolist()) != sorted(gt.point_ids.tolist()):
            raise ShapeMismatch("prediction and ground truth cover different point ids")
        if pred.num_frames != gt.num_frames:
            raise ShapeMismatch(f"prediction has {pred.num_frames} frames, ground truth {gt.num_frames}")
        gt_row = {int(pid): k for k, pid in enumerate(gt.point_ids)}
    records = []
    for k, pid in enumerate(pred.point_ids):
        q = Point(*map(float, pred.positions[k, 0]))
        rec = TrackRecord(q, pred.positions[k], pred.visible[k])
        if gt is not None:
            g = gt_row[int(pid)]
            rec.gt_positions = gt.positions[g]
            rec.gt_visible = gt.visible[g]
        records.append(rec)
    return records


@dataclass(eq=False)
class _Stacked:
    err: np.ndarray
    pred_vis: np.ndarray
    gt_vis: np.ndarray


def _stack(records: Sequence[TrackRecord], scale: tuple[float, float] = (1.0, 1.0)) -> _Stacked:
    if not records:
        raise EmptyEvalSet("no track records")
    n = records[0].num_frames
    for r in records:
        if r.gt_positions is None or r.gt_visible is None:
            raise MissingGT("record without ground truth")
        if r.num_frames != n or len(r.gt_visible) != n:
            raise ShapeMismatch("records differ in frame count")
    pred = np.stack([np.asarray(r.positions, dtype=np.float64) for r in records])[:, 1:]
    gt = np.stack([np.asarray(r.gt_positions, dtype=np.float64) for r in records])[:, 1:]
    d = (pred - gt) * np.asarray(scale, dtype=np.float64)
    err = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
    pred_vis = np.stack([np.asarray(r.visible, dtype=bool) for r in records])[:, 1:]
    gt_vis = np.stack([np.asarray(r.gt_visible, dtype=bool) for r in records])[:, 1:]
    return _Stacked(err, pred_vis, gt_vis)


def scale_between(source: ImageExtent | None, target: ImageExtent | None) -> tuple[float, float]:
    if source is None or target is None:
        return (1.0, 1.0)
    return (target.width / source.width, target.height / source.height)


def occlusion_accuracy(records: Sequence[TrackRecord]) -> float:
    s = _stack(records)
    if s.gt_vis.size == 0:
        raise EmptyEvalSet("no frames after the query frame")
    return float(np.mean(s.pred_vis == s.gt_vis))


def _delta_counts(s: _Stacked, thresholds, mask: np.ndarray) -> tuple[dict[int, int], int]:
    sel = mask & s.gt_vis
    total = int(sel.sum())
    return {t: int((sel & (s.err < t)).sum()) for t in thresholds}, total


def position_accuracy(
    records: Sequence[TrackRecord], thresholds=THRESHOLDS, scale=(1.0, 1.0)
) -> tuple[dict[int, float], float]:
    """Fraction of ground-truth-visible pairs within each threshold, and their mean."""
    s = _stack(records, scale)
    return _position_accuracy(s, thresholds, np.ones_like(s.gt_vis))


def _position_accuracy(s: _Stacked, thresholds, mask) -> tuple[dict[int, float], float]:
    hits, total = _delta_counts(s, thresholds, mask)
    if total == 0:
        raise EmptyEvalSet("no ground-truth-visible point/frame pairs")
    delta_at = {t: hits[t] / total for t in thresholds}
    return delta_at, float(np.mean(list(delta_at.values())))


def _jaccard(s: _Stacked, thresholds) -> tuple[dict[int, float], dict[int, tuple[int, int, int]]]:
    jac, counts = {}, {}
    for t in thresholds:
        close = s.err < t
        tp = int((s.pred_vis & s.gt_vis & close).sum())
        fp = int((s.pred_vis & (~s.gt_vis | ~close)).sum())
        fn = int((s.gt_vis & (~s.pred_vis | ~close)).sum())
        counts[t] = (tp, fp, fn)
        denom = tp + fp + fn
        jac[t] = 1.0 if denom == 0 else tp / denom
    return jac, counts


def average_jaccard(records: Sequence[TrackRecord], thresholds=THRESHOLDS, scale=(1.0, 1.0)) -> float:
    """Mean over thresholds of TP / (TP + FP + FN).

    A threshold whose denominator is zero (nothing visible, nothing predicted
    visible) contributes 1.0; :func:`evaluate` lists such thresholds.
    """
    jac, _ = _jaccard(_stack(records, scale), thresholds)
    return float(np.mean(list(jac.values())))


def _precision_recall(s: _Stacked) -> tuple[float, float, int, int, int]:
    tp = int((s.pred_vis & s.gt_vis).sum())
    fp = int((s.pred_vis & ~s.gt_vis).sum())
    fn = int((~s.pred_vis & s.gt_vis).sum())
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall, tp, fp, fn


def visibility_precision_recall(records: Sequence[TrackRecord]) -> tuple[float, float]:
    """Precision and recall with "visible" as the positive class.

    An empty denominator yields 1.0; :func:`evaluate` flags it as degenerate.
    """
    p, r, *_ = _precision_recall(_stack(records))
    return p, r


@dataclass
class SliceReport:
    delta_at: dict[int, float]
    delta_avg: float
    pairs: int


def slice_by_predicted_visibility(
    records: Sequence[TrackRecord], thresholds=THRESHOLDS, scale=(1.0, 1.0)
) -> tuple[SliceReport | None, SliceReport | None, SliceReport]:
    """Position accuracy on predicted-visible pairs, predicted-occluded pairs, and all.

    A slice with no ground-truth-visible pairs is returned as ``None``.
    """
    s = _stack(records, scale)
    out = []
    for mask in (s.pred_vis, ~s.pred_vis, np.ones_like(s.pred_vis)):
        n = int((mask & s.gt_vis).sum())
        if n == 0:
            out.append(None)
            continue
        delta_at, avg = _position_accuracy(s, thresholds, mask)
        out.append(SliceReport(delta_at, avg, n))
    if out[2] is None:
        raise EmptyEvalSet("no ground-truth-visible point/frame pairs")
    return out[0], out[1], out[2]


@dataclass
class EvalReport:
    """All metrics for one evaluation.

    ``delta_avg`` and the ``delta_at`` values are ``None`` when no pair is
    ground-truth visible; ``degenerate`` then lists ``delta_avg``.
    """

    oa: float
    delta_avg: float | None
    delta_at: dict[int, float | None]
    aj: float
    jaccard_at: dict[int, float]
    precision: float
    recall: float
    counts: dict[str, int] = field(default_factory=dict)
    degenerate: list[str] = field(default_factory=list)
    convention: str = "native"

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "oa": self.oa,
            "delta_avg": self.delta_avg,
            "delta_at": {str(t): v for t, v in self.delta_at.items()},
            "aj": self.aj,
            "jaccard_at": {str(t): v for t, v in self.jaccard_at.items()},
            "precision": self.precision,
            "recall": self.recall,
            "counts": dict(self.counts),
            "degenerate": list(self.degenerate),
        }

    def to_text(self) -> str:
        lines = [
            f"convention={self.convention}",
            f"aj={self.aj!r}",
            f"delta_avg={self.delta_avg!r}",
            f"oa={self.oa!r}",
            f"precision={self.precision!r}",
            f"recall={self.recall!r}",
        ]
        lines += [f"delta_at_{t}={v!r}" for t, v in self.delta_at.items()]
        lines += [f"jaccard_at_{t}={v!r}" for t, v in self.jaccard_at.items()]
        lines += [f"count_{k}={v}" for k, v in self.counts.items()]
        lines.append("degenerate=" + ",".join(self.degenerate))
        return "\n".join(lines) + "\n"


def evaluate(
    records: Sequence[TrackRecord],
    thresholds=THRESHOLDS,
    source_extent: ImageExtent | None = None,
    eval_extent: ImageExtent | None = TAPVID_EXTENT,
) -> EvalReport:
    """All metrics at once.

    With both extents given, coordinates are rescaled from ``source_extent``
    to ``eval_extent`` before thresholding; otherwise errors are measured in
    source pixels.
    """
    scale = scale_between(source_extent, eval_extent)
    s = _stack(records, scale)
    if s.gt_vis.size == 0:
        raise EmptyEvalSet("no frames after the query frame")
    degenerate = []
    if s.gt_vis.any():
        delta_at, delta_avg = _position_accuracy(s, thresholds, np.ones_like(s.gt_vis))
    else:
        delta_at, delta_avg = {t: None for t in thresholds}, None
        degenerate.append("delta_avg")
    jac, jcounts = _jaccard(s, thresholds)
    precision, recall, tp, fp, fn = _precision_recall(s)
    degenerate += [f"jaccard_at_{t}" for t, c in jcounts.items() if sum(c) == 0]
    if tp + fp == 0:
        degenerate.append("precision")
    if tp + fn == 0:
        degenerate.append("recall")
    counts = {
        "pairs": int(s.gt_vis.size),
        "gt_visible": int(s.gt_vis.sum()),
        "pred_visible": int(s.pred_vis.sum()),
        "visibility_correct": int((s.pred_vis == s.gt_vis).sum()),
        "vis_tp": tp,
        "vis_fp": fp,
        "vis_fn": fn,
    }
    for t, (jtp, jfp, jfn) in jcounts.items():
        counts[f"within_{t}"] = int((s.gt_vis & (s.err < t)).sum())
        counts[f"jaccard_tp_{t}"] = jtp
        counts[f"jaccard_fp_{t}"] = jfp
        counts[f"jaccard_fn_{t}"] = jfn
    if source_extent is not None and eval_extent is not None:
        convention = f"rescaled {source_extent} -> {eval_extent}"
    else:
        convention = "native"
    return EvalReport(
        oa=counts["visibility_correct"] / counts["pairs"],
        delta_avg=delta_avg,
        delta_at=delta_at,
        aj=float(np.mean(list(jac.values()))),
        jaccard_at=jac,
        precision=precision,
        recall=recall,
        counts=counts,
        degenerate=degenerate,
        convention=convention,
    )


def sample_dense_prediction(state: ChainState, query: Point, occlusion_threshold: float) -> tuple[Point, bool]:
    """Position and visibility of a reference-frame query from a dense state."""
    if not in_bounds(query, state.extent):
        raise OutOfBounds(f"query ({query.x}, {query.y}) outside {state.extent}")
    x = float(bilinear(state.x, query.x, query.y))
    y = float(bilinear(state.y, query.x, query.y))
    occ = float(bilinear(state.occlusion, query.x, query.y))
    return Point(x, y), occ <= occlusion_threshold


def sample_dense_states(
    states: Sequence[ChainState], queries: np.ndarray, occlusion_threshold: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`sample_dense_prediction` over all frames.

    Returns positions ``(P, N, 2)``, visibility ``(P, N)`` and the chained
    variance ``(P, N)`` (``inf`` wherever an infinite neighbour contributes).
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    ext = states[0].extent
    for x, y in queries:
        if not in_bounds(Point(float(x), float(y)), ext):
            raise OutOfBounds(f"query ({x}, {y}) outside {ext}")
    qx, qy = queries[:, 0], queries[:, 1]
    pos = np.empty((len(queries), len(states), 2))
    vis = np.empty((len(queries), len(states)), dtype=bool)
    var = np.empty((len(queries), len(states)))
    for k, st in enumerate(states):
        pos[:, k, 0] = bilinear(st.x, qx, qy)
        pos[:, k, 1] = bilinear(st.y, qx, qy)
        vis[:, k] = bilinear(st.occlusion, qx, qy) <= occlusion_threshold
        infinite = np.isinf(st.variance)
        sv = bilinear(np.where(infinite, 0.0, st.variance), qx, qy)
        var[:, k] = np.where(bilinear(infinite.astype(np.float64), qx, qy) > 0, np.inf, sv)
    return pos, vis, var
