"""Long-term dense point tracking by chaining optical flow over multiple time gaps."""

from __future__ import annotations

from .backend import ArrayProvider, FileProvider, FunctionProvider, adapt_matcher, default_adapter_config
from .chain import ChainConfig, ChainState, Tracker, delta_schedule, track
from .core import FlowBundle, FlowField, ImageExtent, Point, ScalarField
from .ensemble import combine, run_pair
from .errors import FormatError, TrackingError
from .formats import TrackTable, read_flo, read_flowpack, read_tracks, write_flo, write_flowpack, write_tracks
from .metrics import evaluate, records_from_tables

__version__ = "0.1.0"

__all__ = [
    "ArrayProvider",
    "ChainConfig",
    "ChainState",
    "FileProvider",
    "FlowBundle",
    "FlowField",
    "FormatError",
    "FunctionProvider",
    "ImageExtent",
    "Point",
    "ScalarField",
    "TrackTable",
    "Tracker",
    "TrackingError",
    "adapt_matcher",
    "combine",
    "default_adapter_config",
    "delta_schedule",
    "evaluate",
    "read_flo",
    "read_flowpack",
    "read_tracks",
    "records_from_tables",
    "run_pair",
    "track",
    "write_flo",
    "write_flowpack",
    "write_tracks",
]
