"""Raster ingestion, analysis tiling, and the display tile pyramid.

Ingestion accepts 8/16-bit PNG (grayscale or RGB) plus a JSON sidecar
{"crs": <epsg>, "geotransform": [6 floats]}; GeoTIFF parsing is out of
scope. Pixel buffers are immutable after ingestion, so every operation
here is a pure function over immutable inputs and safe under concurrent
readers.
"""

from __future__ import annotations

import io
import json
import math
import uuid
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import geo
from .errors import (InvalidPayloadError, TileNotReadyError, UnknownRasterError,
                     ValidationError)
from .geo import GeoTransform, TileAddress
from .store import Store

ANALYSIS_TILE_SIZE = 300
DISPLAY_TILE_SIZE = 256
MAX_ZOOM = 22

RESAMPLING_MODES = ("nearest", "bilinear")


@dataclass(frozen=True)
class Raster:
    """A georeferenced image grid. pixels is (h, w) or (h, w, 3), C-order."""

    id: str
    width: int
    height: int
    bands: int
    bit_depth: int
    crs: int
    geotransform: GeoTransform
    pixels: np.ndarray

    def __post_init__(self):
        expected = self.width * self.height * self.bands * (self.bit_depth // 8)
        if self.pixels.nbytes != expected:
            raise ValidationError(
                f"pixel buffer is {self.pixels.nbytes} bytes, expected {expected}")

    def gray8(self) -> np.ndarray:
        """8-bit single-band view (luminance for RGB, high byte for 16-bit)."""
        from .detector import to_grayscale_u8
        return to_grayscale_u8(self.pixels)

    def meta(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "bands": self.bands,
            "bit_depth": self.bit_depth,
            "crs": self.crs,
            "geotransform": self.geotransform.to_list(),
        }


@dataclass
class AnalysisTile:
    """One 300x300 window of the detection/review grid."""

    raster_id: str
    index: tuple[int, int]          # (col, row) in the tile grid
    window: tuple[int, int, int, int]  # (x0, y0, w, h), w/h <= tile size
    status: str = "unprocessed"     # unprocessed | detected | corrected


def partition_analysis_tiles(raster_or_size, tile_size: int = ANALYSIS_TILE_SIZE,
                             raster_id: str | None = None) -> list[AnalysisTile]:
    """Disjoint row-major cover of the raster by tile_size windows.

    Every pixel lies in exactly one window; only the last column/row may
    be smaller than tile_size.
    """
    if isinstance(raster_or_size, Raster):
        width, height = raster_or_size.width, raster_or_size.height
        raster_id = raster_or_size.id
    else:
        width, height = raster_or_size
        raster_id = raster_id or ""
    if width <= 0 or height <= 0:
        raise ValidationError("raster dimensions must be positive")
    cols = math.ceil(width / tile_size)
    rows = math.ceil(height / tile_size)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            x0, y0 = c * tile_size, r * tile_size
            tiles.append(AnalysisTile(
                raster_id=raster_id, index=(c, r),
                window=(x0, y0, min(tile_size, width - x0), min(tile_size, height - y0))))
    return tiles


def extract_window(gray: np.ndarray, window: tuple[int, int, int, int],
                   pad_to: int = ANALYSIS_TILE_SIZE) -> np.ndarray:
    """Window content zero-padded to pad_to x pad_to (the worker input shape)."""
    x0, y0, w, h = window
    out = np.zeros((pad_to, pad_to), dtype=gray.dtype)
    out[:h, :w] = gray[y0:y0 + h, x0:x0 + w]
    return out


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def parse_sidecar(sidecar: dict | str | bytes) -> tuple[int, GeoTransform]:
    if isinstance(sidecar, (str, bytes)):
        try:
            sidecar = json.loads(sidecar)
        except json.JSONDecodeError as exc:
            raise InvalidPayloadError(f"sidecar is not valid JSON: {exc}") from exc
    if not isinstance(sidecar, dict) or set(sidecar) - {"crs", "geotransform"}:
        raise InvalidPayloadError('sidecar must be exactly {"crs", "geotransform"}')
    try:
        crs = int(sidecar["crs"])
        gt = GeoTransform.from_sequence(sidecar["geotransform"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidPayloadError(f"bad sidecar: {exc}") from exc
    if crs not in geo.SUPPORTED_CRS:
        raise ValidationError(f"crs must be one of {geo.SUPPORTED_CRS}, got {crs}")
    if gt.determinant == 0.0:
        raise ValidationError("geotransform is singular")
    return crs, gt


def ingest_array(pixels: np.ndarray, crs: int, geotransform,
                 raster_id: str | None = None) -> Raster:
    pixels = np.ascontiguousarray(pixels)
    if pixels.dtype == np.uint8:
        bit_depth = 8
    elif pixels.dtype == np.uint16:
        bit_depth = 16
    else:
        raise ValidationError(f"unsupported pixel dtype {pixels.dtype}")
    if pixels.ndim == 2:
        bands = 1
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        bands = 3
    else:
        raise ValidationError(f"unsupported pixel shape {pixels.shape}")
    crs, gt = parse_sidecar({"crs": crs, "geotransform": list(geotransform)
                             if not isinstance(geotransform, GeoTransform)
                             else geotransform.to_list()})
    pixels.setflags(write=False)
    return Raster(id=raster_id or f"raster-{uuid.uuid4().hex[:12]}",
                  width=pixels.shape[1], height=pixels.shape[0], bands=bands,
                  bit_depth=bit_depth, crs=crs, geotransform=gt, pixels=pixels)


def ingest_png(png_bytes: bytes, sidecar: dict | str | bytes,
               raster_id: str | None = None) -> Raster:
    """Decode a PNG + sidecar pair into a Raster."""
    crs, gt = parse_sidecar(sidecar)
    try:
        img = Image.open(io.BytesIO(png_bytes))
        img.load()
    except Exception as exc:
        raise InvalidPayloadError(f"cannot decode PNG: {exc}") from exc
    if img.mode in ("L", "RGB"):
        arr = np.asarray(img)
    elif img.mode in ("I;16", "I"):
        arr = np.asarray(img, dtype=np.int32)
        if arr.min() < 0 or arr.max() > 65535:
            raise InvalidPayloadError("16-bit PNG values out of range")
        arr = arr.astype(np.uint16)
    elif img.mode == "RGBA":
        arr = np.asarray(img)[..., :3]  # alpha dropped on ingest
    else:
        raise InvalidPayloadError(f"unsupported PNG mode {img.mode!r}")
    return ingest_array(arr, crs, gt, raster_id=raster_id)


# ---------------------------------------------------------------------------
# Display tile rendering
# ---------------------------------------------------------------------------


def _display_band(raster: Raster) -> np.ndarray:
    """Render source: uint8, (h, w) or (h, w, 3)."""
    px = raster.pixels
    if raster.bit_depth == 16:
        px = (px >> 8).astype(np.uint8)
    return px


def footprint_mercator(raster: Raster) -> tuple[float, float, float, float]:
    """Axis-aligned EPSG:3857 bounds of the raster's four corners."""
    corners = [(0, 0), (raster.width, 0), (0, raster.height),
               (raster.width, raster.height)]
    xs, ys = [], []
    for c, r in corners:
        gx, gy = geo.pixel_to_geo(raster.geotransform, c, r)
        mx, my = geo.convert_crs(gx, gy, raster.crs, 3857)
        xs.append(mx)
        ys.append(my)
    return min(xs), min(ys), max(xs), max(ys)


def max_native_zoom(raster: Raster) -> int:
    """Deepest zoom worth rendering: display resolution ~ raster resolution."""
    minx, miny, maxx, maxy = footprint_mercator(raster)
    res = min((maxx - minx) / raster.width, (maxy - miny) / raster.height)
    if res <= 0:
        return 0
    z = math.ceil(math.log2(2.0 * geo.MERCATOR_EXTENT / (DISPLAY_TILE_SIZE * res)))
    return max(0, min(MAX_ZOOM, z))


def tile_range(raster: Raster, z: int) -> tuple[range, range]:
    """Tile x/y index ranges intersecting the raster footprint at zoom z."""
    minx, miny, maxx, maxy = footprint_mercator(raster)
    n = 1 << z
    span = 2.0 * geo.MERCATOR_EXTENT / n
    x0 = int(math.floor((minx + geo.MERCATOR_EXTENT) / span))
    x1 = int(math.floor((maxx + geo.MERCATOR_EXTENT) / span))
    y0 = int(math.floor((geo.MERCATOR_EXTENT - maxy) / span))
    y1 = int(math.floor((geo.MERCATOR_EXTENT - miny) / span))
    x0, x1 = max(0, x0), min(n - 1, x1)
    y0, y1 = max(0, y0), min(n - 1, y1)
    return range(x0, x1 + 1), range(y0, y1 + 1)


def render_display_tile(raster: Raster, addr: TileAddress,
                        resampling: str = "bilinear") -> bytes:
    """Render one 256x256 RGBA PNG display tile.

    Pixels outside the raster footprint are fully transparent; rendering
    is deterministic, so repeated renders are byte-identical.
    """
    if resampling not in RESAMPLING_MODES:
        raise ValidationError(f"resampling must be one of {RESAMPLING_MODES}")
    ts = DISPLAY_TILE_SIZE
    minx, miny, maxx, maxy = geo.tile_bounds_mercator(addr)
    res = (maxx - minx) / ts
    mx = minx + (np.arange(ts) + 0.5) * res
    my = maxy - (np.arange(ts) + 0.5) * res

    if raster.crs == 3857:
        gx, gy = mx, my
    else:
        gx = np.degrees(mx / geo.MERCATOR_RADIUS)
        gy = np.degrees(2.0 * np.arctan(np.exp(my / geo.MERCATOR_RADIUS)) - np.pi / 2.0)

    gt = raster.geotransform
    det = gt.determinant
    dx = gx[None, :] - gt.origin_x
    dy = gy[:, None] - gt.origin_y
    col = (gt.pixel_h * dx - gt.row_rot * dy) / det
    row = (gt.pixel_w * dy - gt.col_rot * dx) / det

    inside = (col >= 0) & (col < raster.width) & (row >= 0) & (row < raster.height)
    band = _display_band(raster)

    if resampling == "nearest":
        c = np.clip(np.floor(col), 0, raster.width - 1).astype(np.intp)
        r = np.clip(np.floor(row), 0, raster.height - 1).astype(np.intp)
        sampled = band[r, c].astype(np.float64)
    else:
        cf = col - 0.5
        rf = row - 0.5
        c0 = np.floor(cf).astype(np.intp)
        r0 = np.floor(rf).astype(np.intp)
        tx = cf - c0
        ty = rf - r0
        c0c = np.clip(c0, 0, raster.width - 1)
        c1c = np.clip(c0 + 1, 0, raster.width - 1)
        r0c = np.clip(r0, 0, raster.height - 1)
        r1c = np.clip(r0 + 1, 0, raster.height - 1)
        v00 = band[r0c, c0c].astype(np.float64)
        v01 = band[r0c, c1c].astype(np.float64)
        v10 = band[r1c, c0c].astype(np.float64)
        v11 = band[r1c, c1c].astype(np.float64)
        if band.ndim == 3:
            tx = tx[..., None]
            ty = ty[..., None]
        sampled = (v00 * (1 - ty) * (1 - tx) + v01 * (1 - ty) * tx
                   + v10 * ty * (1 - tx) + v11 * ty * tx)

    rgba = np.zeros((ts, ts, 4), dtype=np.uint8)
    values = np.clip(np.floor(sampled + 0.5), 0, 255).astype(np.uint8)
    if band.ndim == 2:
        for ch in range(3):
            rgba[..., ch] = np.where(inside, values, 0)
    else:
        for ch in range(3):
            rgba[..., ch] = np.where(inside, values[..., ch], 0)
    rgba[..., 3] = np.where(inside, 255, 0)
    return encode_png_rgba(rgba)


def encode_png_rgba(rgba: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


_TRANSPARENT_TILE: bytes | None = None


def transparent_tile() -> bytes:
    global _TRANSPARENT_TILE
    if _TRANSPARENT_TILE is None:
        _TRANSPARENT_TILE = encode_png_rgba(
            np.zeros((DISPLAY_TILE_SIZE, DISPLAY_TILE_SIZE, 4), dtype=np.uint8))
    return _TRANSPARENT_TILE


# ---------------------------------------------------------------------------
# Persistence-backed catalog
# ---------------------------------------------------------------------------


class RasterCatalog:
    """Raster records + pixel blobs + the rendered tile pyramid."""

    def __init__(self, store: Store):
        self._store = store
        self._cache: dict[str, Raster] = {}

    def ingest(self, png_bytes: bytes, sidecar, raster_id: str | None = None,
               project_id: str | None = None) -> Raster:
        raster = ingest_png(png_bytes, sidecar, raster_id=raster_id)
        return self._persist(raster, project_id)

    def ingest_array(self, pixels: np.ndarray, crs: int, geotransform,
                     raster_id: str | None = None,
                     project_id: str | None = None) -> Raster:
        raster = ingest_array(pixels, crs, geotransform, raster_id=raster_id)
        return self._persist(raster, project_id)

    def _persist(self, raster: Raster, project_id: str | None) -> Raster:
        buf = io.BytesIO()
        np.save(buf, raster.pixels)
        self._store.blobs.put(f"rasters/{raster.id}.npy", buf.getvalue())
        self._store.records.put("rasters", raster.id, {
            **raster.meta(),
            "project_id": project_id,
            "pyramid_zooms": [],
        }, ref=project_id)
        self._cache[raster.id] = raster
        return raster

    def meta(self, raster_id: str) -> dict:
        rec = self._store.records.get("rasters", raster_id)
        if rec is None:
            raise UnknownRasterError(f"raster {raster_id!r} not found")
        return rec.data

    def get(self, raster_id: str) -> Raster:
        cached = self._cache.get(raster_id)
        if cached is not None:
            return cached
        meta = self.meta(raster_id)
        blob = self._store.blobs.get(f"rasters/{raster_id}.npy")
        if blob is None:
            raise UnknownRasterError(f"raster {raster_id!r} has no pixel blob")
        pixels = np.load(io.BytesIO(blob))
        raster = Raster(id=raster_id, width=meta["width"], height=meta["height"],
                        bands=meta["bands"], bit_depth=meta["bit_depth"],
                        crs=meta["crs"],
                        geotransform=GeoTransform.from_sequence(meta["geotransform"]),
                        pixels=pixels)
        self._cache[raster_id] = raster
        return raster

    def list(self, project_id: str | None = None) -> list[dict]:
        return [r.data for r in self._store.records.list("rasters", ref=project_id)]

    def build_pyramid(self, raster_id: str, resampling: str = "bilinear",
                      progress=None) -> list[int]:
        """Render all display tiles intersecting the footprint, zooms 0..native.

        Tiles are written through the atomic blob store, and a zoom level is
        only marked ready after every tile in it is stored, so readers never
        observe partially written tiles.
        """
        raster = self.get(raster_id)
        zooms = list(range(0, max_native_zoom(raster) + 1))
        done: list[int] = []
        total = sum(len(xs) * len(ys) for z in zooms
                    for xs, ys in [tile_range(raster, z)]) or 1
        rendered = 0
        for z in zooms:
            xs, ys = tile_range(raster, z)
            for x in xs:
                for y in ys:
                    png = render_display_tile(raster, TileAddress(z, x, y), resampling)
                    self._store.blobs.put(f"tiles/{raster_id}/{z}/{x}/{y}.png", png)
                    rendered += 1
                    if progress is not None:
                        progress(rendered / total)
            done.append(z)
            meta = self.meta(raster_id)
            meta["pyramid_zooms"] = done
            self._store.records.put("rasters", raster_id, meta,
                                    ref=meta.get("project_id"))
        return done

    def get_display_tile(self, raster_id: str, addr: TileAddress) -> bytes:
        """Stored tile for a pyramid-ready zoom; transparent when the tile
        is outside the footprint; tile-not-ready when the zoom isn't built."""
        meta = self.meta(raster_id)
        if addr.z not in meta.get("pyramid_zooms", []):
            raise TileNotReadyError(
                f"zoom {addr.z} of raster {raster_id!r} is not rendered yet")
        blob = self._store.blobs.get(f"tiles/{raster_id}/{addr.z}/{addr.x}/{addr.y}.png")
        if blob is None:
            return transparent_tile()
        return blob
