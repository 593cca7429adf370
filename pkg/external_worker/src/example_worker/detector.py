"""Independent reimplementation of the platform's structure detector.

Deliberately written against the published pipeline contract with plain
numpy only (no scipy, no imports from the platform package): threshold,
disk opening, 8-connected components, crack-boundary tracing, and
Douglas-Peucker simplification. For identical pixels and parameters the
polygon lists must match the reference worker exactly; the test suite
holds the two implementations to byte equality.
"""

from __future__ import annotations

import math

import numpy as np

Ring = list[tuple[float, float]]


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        lum = (0.299 * arr[..., 0].astype(np.float64)
               + 0.587 * arr[..., 1].astype(np.float64)
               + 0.114 * arr[..., 2].astype(np.float64))
        arr = np.floor(lum + 0.5)
    if arr.dtype == np.uint16:
        arr = arr >> 8
    return np.clip(arr, 0, 255).astype(np.uint8)


def otsu(gray: np.ndarray) -> int:
    """Between-class-variance threshold; lowest maximizer wins."""
    hist = np.bincount(gray.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    sum0 = np.cumsum(hist * levels)
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = sum0 / w0
        mu1 = (sum0[-1] - sum0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    out = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx * dx + dy * dy <= radius * radius:
                out.append((dy, dx))
    return out


def _shift(mask: np.ndarray, dy: int, dx: int, fill: bool) -> np.ndarray:
    out = np.full_like(mask, fill)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def open_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erosion (out-of-bounds counts as foreground) then dilation."""
    if radius == 0:
        return mask.copy()
    offsets = disk_offsets(radius)
    eroded = np.ones_like(mask)
    for dy, dx in offsets:
        eroded &= _shift(mask, -dy, -dx, True)
    dilated = np.zeros_like(mask)
    for dy, dx in offsets:
        dilated |= _shift(eroded, dy, dx, False)
    return dilated


def label_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected components as boolean masks, in scan order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    components = []
    for sr in range(h):
        row = mask[sr]
        for sc in np.nonzero(row & ~seen[sr])[0]:
            stack = [(sr, int(sc))]
            seen[sr, sc] = True
            member = []
            while stack:
                r, c = stack.pop()
                member.append((r, c))
                for rr in range(max(r - 1, 0), min(r + 2, h)):
                    for cc in range(max(c - 1, 0), min(c + 2, w)):
                        if mask[rr, cc] and not seen[rr, cc]:
                            seen[rr, cc] = True
                            stack.append((rr, cc))
            comp = np.zeros_like(mask)
            rows, cols = zip(*member)
            comp[list(rows), list(cols)] = True
            components.append(comp)
    return components


_DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, S, W, N


def trace_boundary(mask: np.ndarray) -> Ring:
    """Clockwise crack outline of the union of pixel squares."""
    rows, cols = np.nonzero(mask)
    h, w = mask.shape

    def fg(cx: int, cy: int) -> bool:
        return 0 <= cx < w and 0 <= cy < h and mask[cy, cx]

    start_row = int(rows.min())
    start_col = int(cols[rows == start_row].min())
    sx, sy, sdir = start_col, start_row, 0
    ring: Ring = [(float(sx), float(sy))]
    x, y, d = sx, sy, sdir
    while True:
        x += _DIRS[d][0]
        y += _DIRS[d][1]
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


def ring_area(ring: Ring) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:]):
        total += x0 * y1 - x1 * y0
    return total / 2.0


def _dp(points: list[tuple[float, float]], epsilon: float) -> list[tuple[float, float]]:
    if len(points) <= 2:
        return list(points)
    ax, ay = points[0]
    bx, by = points[-1]
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    best_i, best_d = 0, -1.0
    for i in range(1, len(points) - 1):
        px, py = points[i]
        if seg2 == 0.0:
            dist = math.hypot(px - ax, py - ay)
        else:
            dist = abs(dx * (py - ay) - dy * (px - ax)) / math.sqrt(seg2)
        if dist > best_d:
            best_i, best_d = i, dist
    if best_d <= epsilon:
        return [points[0], points[-1]]
    return _dp(points[:best_i + 1], epsilon)[:-1] + _dp(points[best_i:], epsilon)


def simplify_ring(ring: Ring, epsilon: float) -> Ring:
    if len(ring) < 4:
        return list(ring)
    pts = list(ring[:-1])
    p0 = pts[0]
    far = max(range(1, len(pts)),
              key=lambda i: (pts[i][0] - p0[0]) ** 2 + (pts[i][1] - p0[1]) ** 2)
    out = _dp(pts[:far + 1], epsilon)[:-1] + _dp(pts[far:] + [p0], epsilon)
    if len(out) < 4 or abs(ring_area(out)) <= 0.0:
        return list(ring)
    return out


def detect_tile(pixels: np.ndarray, params: dict) -> list[Ring]:
    """Run the pipeline for one tile with a params dict as served by the
    models API; output order is by component top-left pixel."""
    gray = to_grayscale(pixels)
    threshold = params.get("threshold", "otsu")
    if threshold == "otsu":
        threshold = otsu(gray)
    polarity = params.get("polarity", "bright_objects")
    mask = gray > int(threshold) if polarity == "bright_objects" else gray < int(threshold)
    mask = open_mask(mask, int(params.get("open_radius", 0)))

    min_area = float(params.get("min_area", 20))
    raw_max = params.get("max_area", None)
    max_area = math.inf if raw_max is None else float(raw_max)
    epsilon = float(params.get("simplify_epsilon", 0.0))

    keep = []
    for comp in label_components(mask):
        area = float(comp.sum())
        if not (min_area <= area <= max_area):
            continue
        rows, cols = np.nonzero(comp)
        top = int(rows.min())
        left = int(cols[rows == top].min())
        keep.append((top, left, comp))
    keep.sort(key=lambda item: (item[0], item[1]))

    rings = []
    for _, _, comp in keep:
        ring = trace_boundary(comp)
        if epsilon > 0:
            ring = simplify_ring(ring, epsilon)
        rings.append(ring)
    return rings
