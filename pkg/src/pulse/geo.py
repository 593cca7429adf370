"""Georeferencing math: affine geotransforms, spherical Mercator, XYZ tiles.

Pixel coordinates are continuous: pixel (col, row) covers the half-open
square [col, col+1) x [row, row+1), and the geotransform maps the
*corner* (0, 0) of the grid to (origin_x, origin_y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import OutOfRangeError, SingularTransformError, ValidationError

# Spherical Mercator (EPSG:3857) sphere radius in metres.
MERCATOR_RADIUS = 6378137.0
MERCATOR_EXTENT = math.pi * MERCATOR_RADIUS  # half world width
# Latitude limit where the square Mercator world ends.
MAX_TILE_LAT = 85.0511

SUPPORTED_CRS = (4326, 3857)


@dataclass(frozen=True)
class GeoTransform:
    """Six-coefficient affine map from (col, row) pixel space to geo space.

    Coefficient order follows the usual raster convention:
    (origin_x, pixel_w, row_rot, origin_y, col_rot, pixel_h);
    pixel_h is negative for north-up imagery.
    """

    origin_x: float
    pixel_w: float
    row_rot: float
    origin_y: float
    col_rot: float
    pixel_h: float

    @classmethod
    def from_sequence(cls, seq) -> "GeoTransform":
        vals = [float(v) for v in seq]
        if len(vals) != 6:
            raise ValidationError("geotransform must have exactly 6 coefficients")
        return cls(*vals)

    def to_list(self) -> list[float]:
        return [self.origin_x, self.pixel_w, self.row_rot,
                self.origin_y, self.col_rot, self.pixel_h]

    @property
    def determinant(self) -> float:
        return self.pixel_w * self.pixel_h - self.row_rot * self.col_rot


def pixel_to_geo(gt: GeoTransform, col: float, row: float) -> tuple[float, float]:
    """Map fractional pixel coordinates to geo coordinates."""
    geo_x = gt.origin_x + col * gt.pixel_w + row * gt.row_rot
    geo_y = gt.origin_y + col * gt.col_rot + row * gt.pixel_h
    return geo_x, geo_y


def geo_to_pixel(gt: GeoTransform, geo_x: float, geo_y: float) -> tuple[float, float]:
    """Exact affine inverse of :func:`pixel_to_geo`.

    Raises:
        SingularTransformError: when the transform determinant is 0.
    """
    det = gt.determinant
    if det == 0.0:
        raise SingularTransformError("geotransform is singular (determinant 0)")
    dx = geo_x - gt.origin_x
    dy = geo_y - gt.origin_y
    col = (gt.pixel_h * dx - gt.row_rot * dy) / det
    row = (gt.pixel_w * dy - gt.col_rot * dx) / det
    return col, row


# ---------------------------------------------------------------------------
# CRS conversion (EPSG:4326 <-> EPSG:3857)
# ---------------------------------------------------------------------------


def lonlat_to_mercator(lon: float, lat: float) -> tuple[float, float]:
    x = MERCATOR_RADIUS * math.radians(lon)
    y = MERCATOR_RADIUS * math.log(math.tan(math.pi / 4.0 + math.radians(lat) / 2.0))
    return x, y


def mercator_to_lonlat(x: float, y: float) -> tuple[float, float]:
    lon = math.degrees(x / MERCATOR_RADIUS)
    lat = math.degrees(2.0 * math.atan(math.exp(y / MERCATOR_RADIUS)) - math.pi / 2.0)
    return lon, lat


def convert_crs(x: float, y: float, src: int, dst: int) -> tuple[float, float]:
    """Convert a coordinate pair between the two supported EPSG codes."""
    for code in (src, dst):
        if code not in SUPPORTED_CRS:
            raise ValidationError(f"unsupported CRS EPSG:{code}")
    if src == dst:
        return x, y
    if src == 4326:
        return lonlat_to_mercator(x, y)
    return mercator_to_lonlat(x, y)


# ---------------------------------------------------------------------------
# XYZ / slippy-map tile addressing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class TileAddress:
    """XYZ scheme tile address, origin at the top-left of the world."""

    z: int
    x: int
    y: int

    def __post_init__(self):
        if self.z < 0:
            raise ValidationError("zoom must be >= 0")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValidationError(f"tile ({self.x},{self.y}) out of range for z={self.z}")


def lonlat_to_tile(z: int, lon: float, lat: float) -> TileAddress:
    """Tile containing (lon, lat) at zoom z.

    Longitude is wrapped into [-180, 180); latitude beyond the Mercator
    limit raises.
    """
    if abs(lat) > MAX_TILE_LAT:
        raise OutOfRangeError(f"latitude {lat} outside +/-{MAX_TILE_LAT}")
    lon = ((lon + 180.0) % 360.0) - 180.0
    n = 1 << z
    latr = math.radians(lat)
    x = math.floor((lon + 180.0) / 360.0 * n)
    y = math.floor((1.0 - math.log(math.tan(latr) + 1.0 / math.cos(latr)) / math.pi) / 2.0 * n)
    x = min(max(x, 0), n - 1)
    y = min(max(y, 0), n - 1)
    return TileAddress(z=z, x=int(x), y=int(y))


def tile_bounds_mercator(addr: TileAddress) -> tuple[float, float, float, float]:
    """(min_x, min_y, max_x, max_y) of the tile in EPSG:3857 metres."""
    n = 1 << addr.z
    span = 2.0 * MERCATOR_EXTENT / n
    min_x = -MERCATOR_EXTENT + addr.x * span
    max_y = MERCATOR_EXTENT - addr.y * span
    return min_x, max_y - span, min_x + span, max_y


def mercator_resolution(z: int, tile_px: int = 256) -> float:
    """Metres per display-tile pixel at zoom z."""
    return 2.0 * MERCATOR_EXTENT / ((1 << z) * tile_px)
