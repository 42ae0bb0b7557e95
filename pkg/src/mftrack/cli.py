"""Command-line interface: ``mftrack {synth,track,eval,compare,viz,config}``.

Failures exit with status 1 and a single stderr line
``error: <Category>: <message>`` where ``Category`` is the exception class
(``ConfigError``, ``ShapeMismatch``, ``MissingFile`` ...).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .backend import pair_stem
from .chain import ChainState, delta_schedule, track
from .config import DEFAULT_CONFIG, RunConfig, TrackerConfig, load_config, load_scene, load_yaml
from .core import ImageExtent
from .ensemble import STRATEGIES as ENSEMBLE_STRATEGIES
from .ensemble import combine, tracks_from_states
from .errors import ConfigError, MissingGT, TrackingError
from .formats import TrackTable, atomic_write, read_tracks, write_flo, write_flowpack, write_tracks
from .metrics import TAPVID_EXTENT, THRESHOLDS, evaluate, records_from_tables
from .synth import DegradationModel, SynthProvider, grid_queries, gt_tracks, model_from_dict

log = logging.getLogger("mftrack")


def _extent_arg(text: str) -> ImageExtent | None:
    if text.lower() == "native":
        return None
    try:
        w, h = text.lower().split("x")
        return ImageExtent(int(w), int(h))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH or 'native', got {text!r}") from None


def _thresholds_arg(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return tuple(int(v) if v == int(v) else v for v in values)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with atomic_write(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def schedule_pairs(num_frames: int, max_candidates: int) -> list[tuple[int, int]]:
    """Every frame pair the mft, chain and direct strategies can request."""
    pairs = set()
    for j in range(2, num_frames + 1):
        deltas = set(delta_schedule(j, max_candidates)) | {1, j - 1}
        pairs.update((j - d, j) for d in deltas)
    return sorted(pairs)


def cmd_synth(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    model = None
    if args.degradation is not None:
        model = model_from_dict(dict(load_yaml(Path(args.degradation)) or {}))
    if args.seed is not None:
        model = dataclasses.replace(model or DegradationModel(), seed=args.seed)
    provider = SynthProvider(scene, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = scene.num_frames
    if args.all_pairs:
        pairs = [(i, j) for j in range(2, n + 1) for i in range(1, j)]
    else:
        pairs = schedule_pairs(n, args.max_candidates)
    for i, j in pairs:
        bundle = provider.provide(i, j)
        stem = out / pair_stem(i, j)
        if args.format == "flo":
            write_flo(bundle.flow, stem.with_suffix(".flo"))
            write_flowpack(bundle, stem.with_suffix(".scalars.mftflow"))
        else:
            write_flowpack(bundle, stem.with_suffix(".mftflow"))
    queries = grid_queries(scene.extent, args.query_stride, args.query_margin)
    write_tracks(gt_tracks(scene, queries), out / "gt.tracks", gt=True)
    print(f"wrote {len(pairs)} flow pairs and gt.tracks ({len(queries)} points, {n} frames) to {out}")
    return 0


# ---------------------------------------------------------------------------
# track
# ---------------------------------------------------------------------------


def _dump_states(states: Sequence[ChainState], directory: Path, tag: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for st in states:
        with atomic_write(directory / f"state_{tag}_{st.frame:05d}.npz", "wb") as fh:
            np.savez(fh, x=st.x, y=st.y, variance=st.variance, occlusion=st.occlusion, source_frame=st.source_frame)


def run_tracker(
    tcfg: TrackerConfig, num_frames: int, queries: np.ndarray, tag: str, dump_dir: Path | None = None
) -> TrackTable:
    provider = tcfg.build_provider()
    cfg = tcfg.chain_config()
    states = track(num_frames, provider, cfg)
    if dump_dir is not None:
        _dump_states(states, dump_dir, tag)
    return tracks_from_states(states, queries, cfg.occlusion_threshold, tag)


def run_config(cfg: RunConfig, dump_dir: Path | None = None) -> TrackTable:
    """Run the configured tracker(s) and combine their outputs."""
    n = cfg.num_frames()
    if cfg.tracker_b is None:
        extent = cfg.tracker_a.build_provider().extent
        return run_tracker(cfg.tracker_a, n, cfg.queries.points(extent), "a", dump_dir)
    extent_a = cfg.tracker_a.build_provider().extent
    extent_b = cfg.tracker_b.build_provider().extent
    if extent_a != extent_b:
        raise ConfigError(f"tracker extents differ: {extent_a} vs {extent_b}")
    queries = cfg.queries.points(extent_a)
    with ThreadPoolExecutor(max_workers=2) as pool:
        fa = pool.submit(run_tracker, cfg.tracker_a, n, queries, "a", dump_dir)
        fb = pool.submit(run_tracker, cfg.tracker_b, n, queries, "b", dump_dir)
        pred_a, pred_b = fa.result(), fb.result()
    return combine(pred_a, pred_b, cfg.ensemble)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "strategy", None):
        cfg = dataclasses.replace(cfg, tracker_a=dataclasses.replace(cfg.tracker_a, strategy=args.strategy))
    if getattr(args, "ensemble", None):
        cfg = dataclasses.replace(cfg, ensemble=args.ensemble)
    if getattr(args, "frames", None):
        cfg = dataclasses.replace(cfg, frames=args.frames)
    return cfg


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    table = run_config(cfg, Path(args.dump_states) if args.dump_states else None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tracks(table, out)
    print(f"wrote {table.num_points} tracks x {table.num_frames} frames to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval / compare
# ---------------------------------------------------------------------------


def _report_text(report, as_json: bool) -> str:
    if as_json:
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    return report.to_text()


def cmd_eval(args: argparse.Namespace) -> int:
    pred = read_tracks(args.pred)
    gt = read_tracks(args.gt)
    source = args.source_extent or pred.extent or gt.extent
    eval_extent = args.eval_extent
    if eval_extent is not None and source is None:
        raise ConfigError("rescaling needs the source extent; pass --source-extent WxH or --eval-extent native")
    report = evaluate(records_from_tables(pred, gt), args.thresholds, source, eval_extent)
    text = _report_text(report, args.json)
    if args.out:
        _write_text(Path(args.out), text)
    sys.stdout.write(text)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    n = cfg.num_frames()
    extent = cfg.tracker_a.build_provider().extent
    queries = cfg.queries.points(extent)
    if args.gt:
        gt = read_tracks(args.gt)
    elif cfg.tracker_a.scene is not None:
        gt = gt_tracks(cfg.tracker_a.scene, queries)
    else:
        raise MissingGT("compare needs --gt unless tracker_a is a synthetic scene")
    if gt.num_frames > n:
        gt = TrackTable(gt.point_ids, gt.positions[:, :n], gt.visible[:, :n], extent=gt.extent)
    reports = {}
    for strategy in ("direct", "chain", "mft"):
        tcfg = dataclasses.replace(cfg.tracker_a, strategy=strategy)
        pred = run_tracker(tcfg, n, queries, "a")
        reports[strategy] = evaluate(records_from_tables(pred, gt), cfg.thresholds, extent, cfg.eval_extent)
    out = Path(args.out) if args.out else None
    rows = [f"{'strategy':<8} {'delta_avg':>9} {'AJ':>7} {'OA':>7}"]
    for strategy, rep in reports.items():
        delta = "n/a" if rep.delta_avg is None else f"{100 * rep.delta_avg:.2f}"
        rows.append(f"{strategy:<8} {delta:>9} {100 * rep.aj:7.2f} {100 * rep.oa:7.2f}")
        if out is not None:
            _write_text(out / f"report_{strategy}.txt", _report_text(rep, args.json))
    table = "\n".join(rows) + "\n"
    if out is not None:
        _write_text(out / "summary.txt", table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# viz
# ---------------------------------------------------------------------------


def render_frame(
    table: TrackTable, frame: int, extent: ImageExtent, scale: int = 4, trail: int = 8, background=None
):
    """Overlay of all tracks at ``frame`` (1-based): green = visible, red = occluded."""
    from PIL import Image, ImageDraw

    size = (extent.width * scale, extent.height * scale)
    if background is not None:
        img = background.convert("RGB").resize(size)
    else:
        img = Image.new("RGB", size, (32, 32, 32))
    draw = ImageDraw.Draw(img)
    f = frame - 1
    r = max(1, scale // 2)
    for p in range(table.num_points):
        lo = max(0, f - trail)
        path = [((x + 0.5) * scale, (y + 0.5) * scale) for x, y in table.positions[p, lo:f + 1]]
        if len(path) > 1:
            draw.line(path, fill=(150, 150, 150), width=1)
        cx, cy = path[-1]
        if table.visible[p, f]:
            draw.ellipse((cx - r, cy - r, cx + r, cy + r), fill=(40, 220, 60))
        else:
            draw.ellipse((cx - r, cy - r, cx + r, cy + r), outline=(230, 50, 40))
    return img


def cmd_viz(args: argparse.Namespace) -> int:
    from PIL import Image

    table = read_tracks(args.tracks)
    extent = args.extent or table.extent
    if extent is None:
        raise ConfigError("track file has no extent line; pass --extent WxH")
    frames = range(1, table.num_frames + 1) if not args.frames else [int(f) for f in args.frames.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        if not 1 <= frame <= table.num_frames:
            raise ConfigError(f"frame {frame} not in 1..{table.num_frames}")
        background = Image.open(args.images.format(frame=frame)) if args.images else None
        img = render_frame(table, frame, extent, args.scale, args.trail, background)
        with atomic_write(out / f"frame_{frame:05d}.png", "wb") as fh:
            img.save(fh, format="PNG")
    print(f"wrote {len(frames)} images to {out}")
    return 0


def cmd_config(args: argparse.Namespace) -> int:
    if args.out:
        _write_text(Path(args.out), DEFAULT_CONFIG)
    else:
        sys.stdout.write(DEFAULT_CONFIG)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mftrack", description="Long-term dense point tracking by multi-gap flow chaining.")
    parser.add_argument("--version", action="version", version=f"mftrack {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene's flows and ground-truth tracks")
    p.add_argument("scene", help="scene YAML file")
    p.add_argument("--out", required=True, help="output directory (file-provider layout)")
    p.add_argument("--degradation", help="YAML file with degradation settings (default: exact flows)")
    p.add_argument("--seed", type=int, help="override the degradation seed")
    p.add_argument("--format", choices=("mftflow", "flo"), default="mftflow",
                   help="flo writes .flo plus a .scalars.mftflow sidecar")
    p.add_argument("--max-candidates", type=int, default=5, help="K used to choose which pairs to write")
    p.add_argument("--all-pairs", action="store_true", help="write every pair i < j")
    p.add_argument("--query-stride", type=int, default=1)
    p.add_argument("--query-margin", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="run the configured tracker(s) and write a track file")
    p.add_argument("config", help="run config YAML")
    p.add_argument("--out", required=True, help="track file to write")
    p.add_argument("--strategy", choices=("mft", "chain", "direct"), help="override tracker_a.strategy")
    p.add_argument("--ensemble", choices=ENSEMBLE_STRATEGIES, help="override the ensemble strategy")
    p.add_argument("--frames", type=int, help="override the number of frames")
    p.add_argument("--dump-states", metavar="DIR", help="also write dense per-frame states (.npz)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score a track file against ground truth")
    p.add_argument("pred", help="predicted track file")
    p.add_argument("gt", help="ground-truth track file")
    p.add_argument("--thresholds", type=_thresholds_arg, default=THRESHOLDS, help="comma-separated, default 1,2,4,8,16")
    p.add_argument("--eval-extent", type=_extent_arg, default=TAPVID_EXTENT,
                   help="WxH to rescale to before thresholding, or 'native' (default 256x256)")
    p.add_argument("--source-extent", type=_extent_arg, help="extent of the tracked video, if not in the files")
    p.add_argument("--json", action="store_true", help="JSON instead of key=value lines")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="evaluate direct, chain and mft strategies on one input")
    p.add_argument("config", help="run config YAML (tracker_a is used)")
    p.add_argument("--gt", help="ground-truth track file (default: from tracker_a's scene)")
    p.add_argument("--frames", type=int, help="override the number of frames")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="directory for per-strategy reports")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("viz", help="draw tracked points over each frame")
    p.add_argument("tracks", help="track or ground-truth file")
    p.add_argument("--out", required=True, help="output directory for PNGs")
    p.add_argument("--frames", help="comma-separated frame numbers (default: all)")
    p.add_argument("--extent", type=_extent_arg, help="video extent WxH if the file has none")
    p.add_argument("--images", help="background image pattern, e.g. 'frames/{frame:05d}.png'")
    p.add_argument("--scale", type=int, default=4, help="pixels per video pixel")
    p.add_argument("--trail", type=int, default=8, help="frames of trail to draw")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("config", help="print the default run config")
    p.add_argument("--out", help="write it to this file instead")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrackingError as exc:
        category, message = exc.category, str(exc)
    except FileNotFoundError as exc:
        category, message = "MissingFile", f"{exc.filename}: no such file or directory"
    except (IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        category, message = "IOError", str(exc)
    message = " ".join(message.split())
    print(f"error: {category}: {message}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
