"""Boundary-context geometry around missing regions.

The boundary context of a mask is the set of known pixels within Euclidean
distance d of the nearest missing pixel; its bounding box is where short-term
aggregation reads and writes.  Distances are exact: the transform returns the
nearest missing pixel per location and the comparison is done on integer
squared distances, so ties at exactly d are included deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyBoundaryError
from .video_data import KNOWN, MISSING

_EIGHT_CONN = np.ones((3, 3), dtype=np.int32)


@dataclass(frozen=True)
class BoundaryContext:
    """Ring of known pixels near missing ones, as sorted (row, col) pairs."""

    ring: np.ndarray  # (N, 2) int32, lexicographically sorted
    distance: float
    scale_factor: int = 1
    degenerate: bool = False  # all pixels missing: no boundary exists

    def __len__(self) -> int:
        return len(self.ring)

    def to_mask(self, h: int, w: int) -> np.ndarray:
        out = np.zeros((h, w), dtype=bool)
        if len(self.ring):
            out[self.ring[:, 0], self.ring[:, 1]] = True
        return out


@dataclass(frozen=True)
class BoundingRegion:
    top: int
    left: int
    height: int
    width: int

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width


def extract_boundary_context(mask: np.ndarray, d: float,
                             scale_factor: int = 1) -> BoundaryContext:
    """Known pixels whose Euclidean distance to the nearest missing pixel
    is <= d.  A fully known mask yields an empty ring; a fully missing mask
    yields an empty ring flagged degenerate."""
    if d <= 0:
        raise ConfigError(f"boundary distance must be positive, got {d}")
    mask = np.asarray(mask)
    missing = mask == MISSING
    empty = np.zeros((0, 2), dtype=np.int32)
    if not missing.any():
        return BoundaryContext(empty, d, scale_factor)
    if missing.all():
        return BoundaryContext(empty, d, scale_factor, degenerate=True)
    nearest = ndimage.distance_transform_edt(
        ~missing, return_distances=False, return_indices=True
    )
    yy, xx = np.indices(mask.shape)
    sq = (yy - nearest[0]).astype(np.int64) ** 2 + (xx - nearest[1]).astype(np.int64) ** 2
    ring = (~missing) & (sq <= int(round(d * d)))
    coords = np.argwhere(ring).astype(np.int32)
    return BoundaryContext(coords, d, scale_factor)


def bounding_box(ctx: BoundaryContext, bounds: tuple[int, int]) -> BoundingRegion:
    """Minimal axis-aligned box around the ring, clamped to (H, W) bounds."""
    if len(ctx) == 0:
        raise EmptyBoundaryError("bounding box of an empty boundary context")
    h, w = bounds
    top = max(0, int(ctx.ring[:, 0].min()))
    left = max(0, int(ctx.ring[:, 1].min()))
    bottom = min(h - 1, int(ctx.ring[:, 0].max()))
    right = min(w - 1, int(ctx.ring[:, 1].max()))
    return BoundingRegion(top, left, bottom - top + 1, right - left + 1)


def box_from_coords(coords: np.ndarray, bounds: tuple[int, int]) -> BoundingRegion:
    """Clamped minimal box around arbitrary (row, col) coordinates."""
    if len(coords) == 0:
        raise EmptyBoundaryError("bounding box of an empty coordinate set")
    h, w = bounds
    top = min(max(0, int(coords[:, 0].min())), h - 1)
    left = min(max(0, int(coords[:, 1].min())), w - 1)
    bottom = min(max(0, int(coords[:, 0].max())), h - 1)
    right = min(max(0, int(coords[:, 1].max())), w - 1)
    return BoundingRegion(top, left, bottom - top + 1, right - left + 1)


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Mask at scale 1/factor: a coarse pixel is missing iff any covered
    full-resolution pixel is missing."""
    if factor == 1:
        return np.asarray(mask, dtype=np.uint8)
    h, w = mask.shape
    if h % factor or w % factor:
        raise ConfigError(f"mask {h}x{w} not divisible by factor {factor}")
    blocks = np.asarray(mask, dtype=np.uint8).reshape(
        h // factor, factor, w // factor, factor
    )
    return blocks.min(axis=(1, 3))


def scaled_distance(d: float, factor: int) -> float:
    """Boundary distance expressed at scale 1/factor (never below 1)."""
    return max(1.0, float(np.ceil(d / factor)))


def missing_components(mask: np.ndarray) -> list[np.ndarray]:
    """Connected components (8-connectivity) of the missing region, each as a
    boolean map."""
    missing = np.asarray(mask) == MISSING
    if not missing.any():
        return []
    labels, count = ndimage.label(missing, structure=_EIGHT_CONN)
    return [labels == k for k in range(1, count + 1)]


def component_mask(component: np.ndarray) -> np.ndarray:
    """Binary mask (1 known / 0 missing) for a single missing component."""
    return np.where(component, MISSING, KNOWN).astype(np.uint8)


def component_ring(mask: np.ndarray, component: np.ndarray, d: float,
                   scale_factor: int = 1) -> BoundaryContext:
    """Ring of one missing component: known pixels of the full mask within
    distance d of this component.  Pixels missing in other components never
    qualify as ring pixels."""
    mask = np.asarray(mask)
    known = mask == KNOWN
    empty = np.zeros((0, 2), dtype=np.int32)
    if not component.any():
        return BoundaryContext(empty, d, scale_factor)
    if not known.any():
        return BoundaryContext(empty, d, scale_factor, degenerate=True)
    nearest = ndimage.distance_transform_edt(
        ~component, return_distances=False, return_indices=True
    )
    yy, xx = np.indices(mask.shape)
    sq = (yy - nearest[0]).astype(np.int64) ** 2 + (xx - nearest[1]).astype(np.int64) ** 2
    ring = known & (sq <= int(round(d * d)))
    coords = np.argwhere(ring).astype(np.int32)
    return BoundaryContext(coords, d, scale_factor, degenerate=len(coords) == 0)
