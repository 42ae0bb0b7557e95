"""Glue between the oracle fixtures and the package types."""

from __future__ import annotations

import numpy as np

from mftrack.backend import ArrayProvider
from mftrack.core import FlowBundle, FlowField, ImageExtent, ScalarField


def bundle(u, v, var, occ) -> FlowBundle:
    u = np.asarray(u, dtype=np.float64)
    ext = ImageExtent.of(u)
    return FlowBundle(
        FlowField(ext, u, np.asarray(v, dtype=np.float64)),
        ScalarField(ext, np.asarray(var, dtype=np.float64), "variance"),
        ScalarField(ext, np.asarray(occ, dtype=np.float64), "occlusion"),
    )


def constant_bundle(w: int, h: int, u=0.0, v=0.0, var=0.0, occ=0.0) -> FlowBundle:
    return bundle(*(np.full((h, w), float(c)) for c in (u, v, var, occ)))


def provider_from_planes(planes: dict, w: int, h: int) -> ArrayProvider:
    """ArrayProvider over oracle-style planes ``{(i, j): {u, v, var, occ}}``."""
    bundles = {k: bundle(p["u"], p["v"], p["var"], p["occ"]) for k, p in planes.items()}
    return ArrayProvider(ImageExtent(w, h), bundles)


def constant_provider(w: int, h: int, n: int, fn) -> ArrayProvider:
    """Every pair ``i < j <= n`` gets ``constant_bundle(w, h, **fn(i, j))``."""
    bundles = {(i, j): constant_bundle(w, h, **fn(i, j)) for j in range(2, n + 1) for i in range(1, j)}
    return ArrayProvider(ImageExtent(w, h), bundles)
