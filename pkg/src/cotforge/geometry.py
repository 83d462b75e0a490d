"""Box rasterization, mask IoU, box overlays, soft attention targets, KL.

Coordinate conventions used throughout:
  - boxes are normalized [x1, y1, x2, y2] fractions of image width/height
  - rasters are row-major (height, width) arrays
  - a pixel (r, c) has its center at (c + 0.5, r + 0.5) in pixel units, and
    belongs to a box when that center lies in the denormalized box (closed
    on both sides)
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ValidationError


@dataclass(frozen=True)
class BBox:
    """Normalized box with a strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValidationError(
                f"degenerate or out-of-range box: "
                f"({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass
class SoftMask:
    """Floored, normalized attention target over a gh x gw grid."""

    grid: np.ndarray
    floor: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2:
            raise ValidationError("soft mask grid must be 2-D")
        if abs(float(self.grid.sum()) - 1.0) > 1e-9:
            raise ValidationError("soft mask must sum to 1")
        n = self.grid.size
        if float(self.grid.min()) < self.floor / (1.0 + n * self.floor) - 1e-12:
            raise ValidationError("soft mask cell below the floor bound")


@dataclass
class AttentionMap:
    """Model attention distribution over a gh x gw grid (sums to 1)."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2:
            raise ValidationError("attention grid must be 2-D")
        if float(self.grid.min()) < 0.0:
            raise ValidationError("attention grid must be non-negative")
        if abs(float(self.grid.sum()) - 1.0) > 1e-9:
            raise ValidationError("attention grid must sum to 1")


def _center_membership(lo, hi, n):
    centers = np.arange(n, dtype=float) + 0.5
    return (centers >= lo) & (centers <= hi)


def rasterize_box(box: BBox, height: int, width: int) -> np.ndarray:
    """Binary (height, width) raster of the pixels whose centers lie in the box."""
    if height < 1 or width < 1:
        raise ValidationError("raster dims must be positive")
    cols = _center_membership(box.x1 * width, box.x2 * width, width)
    rows = _center_membership(box.y1 * height, box.y2 * height, height)
    return np.outer(rows, cols)


def mask_iou(box: BBox, mask: np.ndarray) -> float:
    """Pixel-count IoU between the rasterized box and a binary mask."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    mask = mask.astype(bool)
    raster = rasterize_box(box, mask.shape[0], mask.shape[1])
    inter = int(np.count_nonzero(raster & mask))
    union = int(np.count_nonzero(raster | mask))
    if union == 0:
        return 0.0
    return inter / union


def render_overlay(image_dims, box: BBox, thickness: int = 1) -> np.ndarray:
    """Rectangular ring raster marking the box boundary.

    Returns a uint8 (height, width) array with 1 on the ring and 0 elsewhere,
    so compositing leaves pixels outside the ring untouched.
    """
    height, width = image_dims
    if thickness < 1:
        raise ValidationError("overlay thickness must be >= 1")
    outer = rasterize_box(box, height, width)
    if not outer.any():
        raise ValidationError("box is degenerate after denormalization")
    x1, x2 = box.x1 * width, box.x2 * width
    y1, y2 = box.y1 * height, box.y2 * height
    inner_cols = _center_membership(x1 + thickness, x2 - thickness, width)
    inner_rows = _center_membership(y1 + thickness, y2 - thickness, height)
    inner = np.outer(inner_rows, inner_cols)
    return (outer & ~inner).astype(np.uint8)


def _average_pool(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = grid.shape
    out = np.empty((out_h, out_w), dtype=float)
    for i in range(out_h):
        r0, r1 = (i * in_h) // out_h, ((i + 1) * in_h) // out_h
        for j in range(out_w):
            c0, c1 = (j * in_w) // out_w, ((j + 1) * in_w) // out_w
            out[i, j] = grid[r0:r1, c0:c1].mean()
    return out


def build_soft_mask(box: BBox, image_dims, grid_dims, sigma=0.0, floor=1e-6) -> SoftMask:
    """Soft attention target for a box: rasterize, blur, pool, floor, normalize.

    The Gaussian blur uses a kernel truncated at 3 sigma with reflected
    boundaries; sigma = 0 skips the blur. Average pooling reduces the image
    raster to the grid, the pooled mass is normalized to a distribution, and
    the floor is added to every cell before the final renormalization, so
    every cell ends up >= floor / (1 + gh*gw*floor).
    """
    height, width = image_dims
    gh, gw = grid_dims
    if gh < 1 or gw < 1 or gh > height or gw > width:
        raise ValidationError(f"grid dims {grid_dims} must be in [1, image dims]")
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    if not 0.0 < floor < 1.0 / (gh * gw):
        raise ValidationError(f"floor must lie in (0, 1/{gh * gw})")
    raster = rasterize_box(box, height, width).astype(float)
    if raster.sum() == 0.0:
        raise ValidationError("box is degenerate after denormalization")
    if sigma > 0.0:
        raster = gaussian_filter(raster, sigma=sigma, mode="reflect", truncate=3.0)
    pooled = _average_pool(raster, gh, gw)
    pooled /= pooled.sum()
    pooled += floor
    pooled /= pooled.sum()
    return SoftMask(grid=pooled, floor=floor)


def kl_divergence(attn, target) -> float:
    """KL(attn || target) with 0*log(0) treated as 0.

    The target must be strictly positive everywhere (soft masks are floored,
    so a zero target cell indicates a bug upstream).
    """
    p = np.asarray(attn, dtype=float)
    q = np.asarray(target, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch: attn {p.shape} vs target {q.shape}")
    if float(q.min()) <= 0.0:
        raise ValidationError("target distribution contains zero cells")
    support = p > 0.0
    value = float(np.sum(p[support] * np.log(p[support] / q[support])))
    if -1e-12 < value < 0.0:
        # roundoff guard for near-identical distributions
        return 0.0
    return value


def kl_attn_logit_grad(attn, target) -> np.ndarray:
    """Gradient of KL(attn || target) w.r.t. the attention logits.

    attn must be the softmax of those logits; the gradient is
    p * (log(p/q) - KL(p || q)) elementwise.
    """
    p = np.asarray(attn, dtype=float)
    q = np.asarray(target, dtype=float)
    kl = kl_divergence(p, q)
    return p * (np.log(p / q) - kl)
