"""Run-length encoded binary masks: encode/decode, area, bounding box, IoU.

Runs are row-major (left to right, top to bottom) and alternate
background/foreground, starting with background. The leading background
run may be 0; no other run may be 0. All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError


@dataclass(frozen=True)
class RleMask:
    """A binary mask of shape (height, width) stored as run lengths."""

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise SchemaError(f"mask dimensions must be positive, got {self.height}x{self.width}")
        if not self.counts:
            raise SchemaError("mask counts must be non-empty")
        if any(c < 0 for c in self.counts):
            raise SchemaError(f"mask counts must be nonnegative, got {self.counts}")
        if any(c == 0 for c in self.counts[1:]):
            raise SchemaError("only the leading background run may be 0")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise SchemaError(
                f"run lengths sum to {total}, expected {self.height * self.width} "
                f"for a {self.height}x{self.width} mask"
            )

    def to_json(self) -> dict:
        return {"h": self.height, "w": self.width, "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            return cls(int(obj["h"]), int(obj["w"]), tuple(int(c) for c in obj["counts"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed RLE mask object: {obj!r}") from exc


def rle_encode(bitmap) -> RleMask:
    """Encode a row-major boolean grid. Raises SchemaError on ragged input."""
    if isinstance(bitmap, np.ndarray):
        grid = bitmap.astype(bool)
        if grid.ndim != 2 or grid.size == 0:
            raise SchemaError(f"expected a non-empty 2-D grid, got shape {grid.shape}")
    else:
        rows = list(bitmap)
        if not rows or not rows[0]:
            raise SchemaError("expected a non-empty 2-D grid")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise SchemaError("ragged grid: all rows must have equal length")
        grid = np.asarray(rows, dtype=bool)

    flat = grid.ravel()
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(grid.shape[0], grid.shape[1], tuple(int(c) for c in counts))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Decode to a boolean array of shape (height, width)."""
    values = np.arange(len(mask.counts)) % 2 == 1
    flat = np.repeat(values, np.asarray(mask.counts, dtype=np.int64))
    return flat.reshape(mask.height, mask.width)


def mask_area(mask: RleMask) -> int:
    """Number of foreground pixels (the odd-indexed runs)."""
    return int(sum(mask.counts[1::2]))


def mask_bbox(mask: RleMask) -> tuple[int, int, int, int] | None:
    """Tight (row_min, col_min, row_max, col_max) box, or None for an empty mask."""
    grid = rle_decode(mask)
    rows = np.flatnonzero(grid.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(grid.any(axis=0))
    return int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1])


def mask_iou(a: RleMask, b: RleMask) -> float:
    """Intersection over union in [0, 1]; two empty masks have IoU 1."""
    if (a.height, a.width) != (b.height, b.width):
        raise SchemaError(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    ga = rle_decode(a)
    gb = rle_decode(b)
    union = int(np.count_nonzero(ga | gb))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(ga & gb))
    return inter / union
