"""Classical structure detector: threshold, morphology, components, polygons.

The pipeline is fully deterministic: identical pixels and params yield a
bit-identical polygon list, which is what lets an out-of-process worker
reimplement it and be checked for exact output equivalence.

Polygon convention: rings are closed (first point repeated last), wound
clockwise in screen orientation (y down), with coordinates on the pixel
*corner* lattice. A component's ring outlines the union of its pixel
squares, so the ring area equals the pixel count before simplification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidParamsError, MultiBandInputError

Ring = list[tuple[float, float]]

POLARITIES = ("bright_objects", "dark_objects")

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# Reference configuration for the shipped generic structures model: tuned
# for bright rooftops on dark terrain, intentionally conservative so that
# scene-specific adaptation has headroom.
GENERIC_STRUCTURE_PARAMS_DICT = {
    "threshold": 150,
    "polarity": "bright_objects",
    "open_radius": 1,
    "min_area": 50,
    "max_area": 5000,
    "simplify_epsilon": 0.0,
}

GENERIC_FLOOD_PARAMS_DICT = {
    "threshold": "otsu",
    "polarity": "dark_objects",
    "open_radius": 1,
    "min_area": 50,
    "max_area": None,
    "simplify_epsilon": 0.0,
}


@dataclass(frozen=True)
class DetectorParams:
    """Parameters of the classical detector.

    threshold: 0..255 intensity cut, or "otsu" for the automatic
    bimodal-histogram criterion. min_area/max_area are in pixels^2
    (max_area may be inf). simplify_epsilon is the polygon simplification
    tolerance in pixels.
    """

    threshold: int | str = "otsu"
    polarity: str = "bright_objects"
    open_radius: int = 0
    min_area: float = 20.0
    max_area: float = math.inf
    simplify_epsilon: float = 0.0

    def validate(self) -> "DetectorParams":
        if isinstance(self.threshold, str):
            if self.threshold != "otsu":
                raise InvalidParamsError(f"threshold {self.threshold!r} is not 'otsu'")
        elif not (0 <= int(self.threshold) <= 255):
            raise InvalidParamsError(f"threshold {self.threshold} outside [0, 255]")
        if self.polarity not in POLARITIES:
            raise InvalidParamsError(f"polarity {self.polarity!r} unknown")
        if self.open_radius < 0:
            raise InvalidParamsError("open_radius must be >= 0")
        if self.min_area > self.max_area:
            raise InvalidParamsError("min_area must be <= max_area")
        if self.simplify_epsilon < 0:
            raise InvalidParamsError("simplify_epsilon must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "polarity": self.polarity,
            "open_radius": int(self.open_radius),
            "min_area": float(self.min_area),
            "max_area": None if math.isinf(self.max_area) else float(self.max_area),
            "simplify_epsilon": float(self.simplify_epsilon),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorParams":
        if not isinstance(data, dict):
            raise InvalidParamsError("detector params must be an object")
        known = {"threshold", "polarity", "open_radius", "min_area",
                 "max_area", "simplify_epsilon"}
        unknown = set(data) - known
        if unknown:
            raise InvalidParamsError(f"unknown detector params: {sorted(unknown)}")
        kwargs = dict(data)
        if kwargs.get("max_area", 0) is None:
            kwargs["max_area"] = math.inf
        if "threshold" in kwargs and not isinstance(kwargs["threshold"], str):
            kwargs["threshold"] = int(kwargs["threshold"])
        return cls(**kwargs).validate()

    def with_changes(self, **kwargs) -> "DetectorParams":
        return replace(self, **kwargs).validate()

    def sort_key(self) -> tuple:
        # Deterministic total order: numeric thresholds first, then otsu.
        thr = self.threshold
        thr_key = (1, 0.0) if isinstance(thr, str) else (0, float(thr))
        return (thr_key, self.polarity, self.open_radius, self.min_area,
                self.max_area, self.simplify_epsilon)


def generic_structure_params() -> DetectorParams:
    return DetectorParams.from_dict(GENERIC_STRUCTURE_PARAMS_DICT)


def generic_flood_params() -> DetectorParams:
    return DetectorParams.from_dict(GENERIC_FLOOD_PARAMS_DICT)


# ---------------------------------------------------------------------------
# Grayscale conversion and thresholding
# ---------------------------------------------------------------------------


def to_grayscale_u8(pixels: np.ndarray) -> np.ndarray:
    """8-bit grayscale view of a tile: RGB is reduced by luminance
    0.299 R + 0.587 G + 0.114 B rounded half-up; 16-bit input drops to the
    high byte."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise MultiBandInputError(f"expected 1 or 3 bands, got {arr.shape[2]}")
        rgb = arr.astype(np.float64)
        lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        arr = np.floor(lum + 0.5)
    elif arr.ndim != 2:
        raise MultiBandInputError(f"expected a 2D or 3D pixel array, got shape {arr.shape}")
    if arr.dtype == np.uint16:
        arr = arr >> 8
    return np.clip(arr, 0, 255).astype(np.uint8)


def otsu_threshold(gray: np.ndarray) -> int:
    """Threshold maximizing between-class variance of the 256-bin histogram.

    Classes are {v <= t} and {v > t}; the lowest maximizing t is returned
    so the choice is deterministic. See docs/DETECTOR.md for the formula.
    """
    hist = np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    sum0 = np.cumsum(hist * levels)
    sum_all = sum0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (sum_all - sum0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def resolve_threshold(gray: np.ndarray, params: DetectorParams) -> int:
    if params.threshold == "otsu":
        return otsu_threshold(gray)
    return int(params.threshold)


def binarize(gray: np.ndarray, threshold: int, polarity: str) -> np.ndarray:
    if polarity == "bright_objects":
        return gray > threshold
    if polarity == "dark_objects":
        return gray < threshold
    raise InvalidParamsError(f"polarity {polarity!r} unknown")


# ---------------------------------------------------------------------------
# Morphology (disk structuring elements)
# ---------------------------------------------------------------------------


def disk_element(radius: int) -> np.ndarray:
    if radius < 0:
        raise InvalidParamsError("radius must be >= 0")
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (xx * xx + yy * yy) <= radius * radius


# Erosion treats out-of-bounds as foreground so objects touching the raster
# edge are not eaten; opening stays anti-extensive (dilation only revisits
# pixels whose in-array neighbourhood was fully foreground).


def open_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological opening; anti-extensive (result is a subset of mask)."""
    if radius == 0:
        return mask.copy()
    se = disk_element(radius)
    eroded = ndimage.binary_erosion(mask, structure=se, border_value=1)
    return ndimage.binary_dilation(eroded, structure=se, border_value=0)


def close_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    se = disk_element(radius)
    dilated = ndimage.binary_dilation(mask, structure=se, border_value=0)
    return ndimage.binary_erosion(dilated, structure=se, border_value=1)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labeling."""
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    return labels, int(count)


# ---------------------------------------------------------------------------
# Boundary tracing
# ---------------------------------------------------------------------------

# Directions on the corner lattice, screen orientation (y down):
# E, S, W, N. Turning right is +1 mod 4, left is -1 mod 4.
_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))


def trace_boundary(mask: np.ndarray) -> Ring:
    """Outer boundary of the union of pixel squares of a component.

    Walks the cracks between foreground and background clockwise (screen
    orientation), keeping foreground on the right. Diagonal-only pinches
    of an 8-connected component are traversed twice so the whole component
    stays in one ring (the ring touches itself at the pinch corner).
    Vertices are integer corner coordinates (x, y); the ring is closed.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return []
    h, w = mask.shape

    def fg(cx: int, cy: int) -> bool:
        return 0 <= cx < w and 0 <= cy < h and mask[cy, cx]

    start_row = int(rows.min())
    start_col = int(cols[rows == start_row].min())
    # Top-left corner of the topmost-leftmost pixel; initial direction east.
    sx, sy, sdir = start_col, start_row, 0
    ring: Ring = [(float(sx), float(sy))]
    x, y, d = sx, sy, sdir
    while True:
        x += _DIRS[d][0]
        y += _DIRS[d][1]
        # Pixels ahead-left and ahead-right of the corner relative to d.
        if d == 0:
            left, right = fg(x, y - 1), fg(x, y)
        elif d == 1:
            left, right = fg(x, y), fg(x - 1, y)
        elif d == 2:
            left, right = fg(x - 1, y), fg(x - 1, y - 1)
        else:
            left, right = fg(x - 1, y - 1), fg(x, y - 1)
        if left:
            nd = (d - 1) % 4
        elif right:
            nd = d
        else:
            nd = (d + 1) % 4
        if (x, y, nd) == (sx, sy, sdir):
            break
        if nd != d:
            ring.append((float(x), float(y)))
        d = nd
    ring.append((float(sx), float(sy)))
    return ring


def ring_area(ring: Sequence[tuple[float, float]]) -> float:
    """Signed shoelace area; positive for our clockwise screen winding."""
    total = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
        total += x0 * y1 - x1 * y0
    return total / 2.0


# ---------------------------------------------------------------------------
# Ring simplification (Douglas-Peucker)
# ---------------------------------------------------------------------------


def _point_segment_dist(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    return abs(dx * (py - ay) - dy * (px - ax)) / math.sqrt(seg2)


def _dp(points: list[tuple[float, float]], epsilon: float) -> list[tuple[float, float]]:
    if len(points) <= 2:
        return list(points)
    a, b = points[0], points[-1]
    best_i, best_d = 0, -1.0
    for i in range(1, len(points) - 1):
        dist = _point_segment_dist(points[i], a, b)
        if dist > best_d:
            best_i, best_d = i, dist
    if best_d <= epsilon:
        return [a, b]
    head = _dp(points[:best_i + 1], epsilon)
    tail = _dp(points[best_i:], epsilon)
    return head[:-1] + tail


def simplify_ring(ring: Ring, epsilon: float) -> Ring:
    """Douglas-Peucker on a closed ring.

    Anchors at the first vertex and the vertex farthest from it, so
    closure is preserved. Falls back to the input when simplification
    would collapse the ring below a valid (positive-area) triangle.
    """
    if epsilon < 0:
        raise InvalidParamsError("epsilon must be >= 0")
    if len(ring) < 4:
        return list(ring)
    pts = list(ring[:-1])
    p0 = pts[0]
    far = max(range(1, len(pts)),
              key=lambda i: (pts[i][0] - p0[0]) ** 2 + (pts[i][1] - p0[1]) ** 2)
    first = _dp(pts[:far + 1], epsilon)
    second = _dp(pts[far:] + [p0], epsilon)
    out = first[:-1] + second
    if len(out) < 4 or abs(ring_area(out)) <= 0.0:
        return list(ring)
    return out


# ---------------------------------------------------------------------------
# The detector
# ---------------------------------------------------------------------------


def detect_tile(pixels: np.ndarray, params: DetectorParams) -> list[Ring]:
    """Run the full pipeline on one analysis tile.

    Returns one polygon ring per retained component, ordered by the
    component's top-left pixel (row, then column). Coordinates are in
    tile pixels.
    """
    params.validate()
    gray = to_grayscale_u8(pixels)
    threshold = resolve_threshold(gray, params)
    mask = binarize(gray, threshold, params.polarity)
    mask = open_mask(mask, params.open_radius)
    return mask_to_polygons(mask, params)


def mask_to_polygons(mask: np.ndarray, params: DetectorParams) -> list[Ring]:
    """Components of a binary mask as simplified boundary rings."""
    labels, count = label_components(mask)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    slices = ndimage.find_objects(labels)
    order = []
    for k in range(1, count + 1):
        area = float(areas[k])
        if not (params.min_area <= area <= params.max_area):
            continue
        sl = slices[k - 1]
        comp = labels[sl] == k
        comp_rows, comp_cols = np.nonzero(comp)
        top = int(comp_rows.min())
        left = int(comp_cols[comp_rows == top].min())
        order.append((sl[0].start + top, sl[1].start + left, k, sl, comp))
    order.sort(key=lambda item: (item[0], item[1]))

    rings: list[Ring] = []
    for _, _, k, sl, comp in order:
        ring = trace_boundary(comp)
        ox, oy = float(sl[1].start), float(sl[0].start)
        ring = [(x + ox, y + oy) for x, y in ring]
        if params.simplify_epsilon > 0:
            ring = simplify_ring(ring, params.simplify_epsilon)
        rings.append(ring)
    return rings


def flood_mask(gray: np.ndarray, params: DetectorParams) -> np.ndarray:
    """Water mask: dark-polarity threshold, then closing and opening."""
    params.validate()
    if params.polarity != "dark_objects":
        raise InvalidParamsError("flood mapping requires polarity=dark_objects")
    threshold = resolve_threshold(gray, params)
    mask = binarize(gray, threshold, params.polarity)
    mask = close_mask(mask, params.open_radius)
    return open_mask(mask, params.open_radius)


def flood_map(pixels: np.ndarray, params: DetectorParams) -> tuple[np.ndarray, list[Ring]]:
    """Full-resolution water mask plus traced water-body polygons.

    Runtime is linear in the pixel count. Multi-band input is rejected;
    flood products are defined over single-band imagery.
    """
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise MultiBandInputError("flood mapping expects a single-band raster")
    gray = to_grayscale_u8(arr)
    mask = flood_mask(gray, params)
    return mask, mask_to_polygons(mask, params)
