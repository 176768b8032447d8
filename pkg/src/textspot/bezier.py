"""Cubic-Bezier text regions: sampling grids, feature alignment, polygon IoU.

A region is bounded by two cubic curves (top and bottom edge, both running
left to right along the reading direction).  Alignment warps the region onto
a fixed rectangular grid through bilinear interpolation of a feature map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InputError

DEFAULT_RASTER_SCALE = 8
DEFAULT_POLY_SAMPLES = 8


@dataclass(frozen=True)
class BezierRegion:
    """8 control points (two cubic curves) delimiting one text instance."""

    top: np.ndarray  # [4,2], left to right
    bottom: np.ndarray  # [4,2], left to right beneath the top curve

    def __post_init__(self):
        top = np.asarray(self.top, dtype=np.float64)
        bottom = np.asarray(self.bottom, dtype=np.float64)
        if top.shape != (4, 2) or bottom.shape != (4, 2):
            raise InputError("BezierRegion needs 4 control points per curve")
        if not (np.all(np.isfinite(top)) and np.all(np.isfinite(bottom))):
            raise InputError("BezierRegion control points must be finite")
        object.__setattr__(self, "top", top)
        object.__setattr__(self, "bottom", bottom)

    @classmethod
    def from_flat(cls, values) -> "BezierRegion":
        """16 floats: top b0..b3 then bottom b0..b3, x before y."""
        v = np.asarray(values, dtype=np.float64).reshape(8, 2)
        return cls(top=v[:4], bottom=v[4:])

    def to_flat(self) -> list[float]:
        return [float(v) for v in np.concatenate([self.top, self.bottom]).ravel()]

    def translated(self, dx: float, dy: float) -> "BezierRegion":
        off = np.array([dx, dy])
        return BezierRegion(self.top + off, self.bottom + off)


@dataclass(frozen=True)
class SampleGrid:
    out_h: int
    out_w: int
    points: np.ndarray  # [out_h, out_w, 2]


def bezier_point(curve, t: float) -> np.ndarray:
    """Point on a cubic curve in Bernstein form at parameter t in [0,1]."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"t={t} outside [0,1]")
    b = np.asarray(curve, dtype=np.float64)
    u = 1.0 - t
    return (u**3) * b[0] + 3 * (u**2) * t * b[1] + 3 * u * (t**2) * b[2] + (t**3) * b[3]


def _bezier_points(curve: np.ndarray, ts: np.ndarray) -> np.ndarray:
    # same term order as bezier_point so sampled vertices match it bitwise
    u = (1.0 - ts)[:, None]
    t = ts[:, None]
    return (u**3) * curve[0] + 3 * (u**2) * t * curve[1] + 3 * u * (t**2) * curve[2] + (t**3) * curve[3]


def bezier_tangent(curve, t: float) -> np.ndarray:
    b = np.asarray(curve, dtype=np.float64)
    u = 1.0 - t
    return 3 * (u**2) * (b[1] - b[0]) + 6 * u * t * (b[2] - b[1]) + 3 * (t**2) * (b[3] - b[2])


def region_grid(region: BezierRegion, out_h: int, out_w: int) -> SampleGrid:
    """Sampling lattice: columns at uniform t, rows at pixel-center offsets
    interpolating between the two curves."""
    if out_h < 1 or out_w < 1:
        raise InputError("grid size must be at least 1x1")
    ts = np.zeros(1) if out_w == 1 else np.arange(out_w) / (out_w - 1)
    p_top = _bezier_points(region.top, ts)  # [out_w, 2]
    p_bot = _bezier_points(region.bottom, ts)
    s = ((np.arange(out_h) + 0.5) / out_h)[:, None, None]
    pts = (1.0 - s) * p_top[None] + s * p_bot[None]
    return SampleGrid(out_h=out_h, out_w=out_w, points=pts)


def bezier_align(feature_map: ad.Tensor, region: BezierRegion, out_h: int, out_w: int,
                 spatial_scale: float) -> ad.Tensor:
    """Warp the region onto a [c,out_h,out_w] grid of the feature map."""
    if spatial_scale <= 0:
        raise InputError("spatial_scale must be positive")
    grid = region_grid(region, out_h, out_w).points.reshape(-1, 2) * spatial_scale
    sampled = ad.bilinear_sample(feature_map, grid)
    return ad.reshape(sampled, (feature_map.shape[0], out_h, out_w))


def region_to_polygon(region: BezierRegion, samples_per_curve: int = DEFAULT_POLY_SAMPLES) -> np.ndarray:
    """Closed polygon: top curve left to right, bottom appended right to left."""
    if samples_per_curve < 2:
        raise InputError("samples_per_curve must be at least 2")
    ts = np.arange(samples_per_curve) / (samples_per_curve - 1)
    top = _bezier_points(region.top, ts)
    bottom = _bezier_points(region.bottom, ts)
    return np.concatenate([top, bottom[::-1]], axis=0)


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (crossing number) containment test, vectorized over points."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    hits = straddles & (px < x_cross)
    return hits.sum(axis=1) % 2 == 1


def polygon_bbox(poly: np.ndarray) -> tuple[float, float, float, float]:
    return float(poly[:, 0].min()), float(poly[:, 1].min()), float(poly[:, 0].max()), float(poly[:, 1].max())


def polygon_area(poly: np.ndarray) -> float:
    """|shoelace| area; a lower bound on even-odd filled area for
    self-intersecting inputs."""
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def iou_upper_bound(a: np.ndarray, b: np.ndarray) -> float:
    """Cheap bound: rasterized IoU never exceeds bbox-intersection over the
    larger polygon area.  Used to skip rasterization of hopeless pairs."""
    ax0, ay0, ax1, ay1 = polygon_bbox(a)
    bx0, by0, bx1, by1 = polygon_bbox(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    denom = max(polygon_area(a), polygon_area(b))
    if denom <= 0:
        return 1.0  # degenerate; let the rasterizer decide
    return min(1.0, iw * ih / denom)


def polygon_iou(a: np.ndarray, b: np.ndarray, raster_scale: int = DEFAULT_RASTER_SCALE) -> float:
    """Rasterized even-odd IoU on a shared integer-aligned grid.

    Degenerate (empty) unions give 0.  Accuracy is O(1/raster_scale); the
    grid is anchored to integer pixel coordinates so iou(a,b) == iou(b,a)
    exactly and iou(a,a) == 1 for non-degenerate polygons.
    """
    if raster_scale < 1:
        raise InputError("raster_scale must be at least 1")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax0, ay0, ax1, ay1 = polygon_bbox(a)
    bx0, by0, bx1, by1 = polygon_bbox(b)
    if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
        return 0.0  # disjoint bounding boxes
    x0 = int(np.floor(min(ax0, bx0)))
    y0 = int(np.floor(min(ay0, by0)))
    x1 = int(np.ceil(max(ax1, bx1)))
    y1 = int(np.ceil(max(ay1, by1)))
    nx = max(1, (x1 - x0) * raster_scale)
    ny = max(1, (y1 - y0) * raster_scale)
    xs = x0 + (np.arange(nx) + 0.5) / raster_scale
    ys = y0 + (np.arange(ny) + 0.5) / raster_scale
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    in_a = points_in_polygon(pts, a)
    in_b = points_in_polygon(pts, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b) / union)
