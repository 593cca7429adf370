"""Seeded synthetic scene generation for benchmarks and fixtures.

Real imagery from the operational deployments is proprietary, so the test
corpus is generated: camp scenes with rectangular structures of known
footprints, and river scenes with a known water mask. Generation is fully
deterministic for a given spec (same seed, byte-identical pixels), and the
ground truth is recorded exactly as drawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detector import Ring
from .errors import ValidationError
from .geo import GeoTransform


@dataclass(frozen=True)
class CampSceneSpec:
    """Refugee-camp style scene: bright rectangular structures on dark terrain.

    Structure intensities are bimodal: a bright majority and a dimmer
    minority (count-exact fractions), which is what gives a fixed-threshold
    generic detector something to miss and adaptation something to gain.
    Structures never straddle analysis-tile borders and never overlap.
    """

    width: int = 2000
    height: int = 2000
    n_structures: int = 220
    dim_fraction: float = 0.28
    bright_intensity: tuple[int, int] = (170, 220)
    dim_intensity: tuple[int, int] = (105, 125)
    size_range: tuple[int, int] = (8, 22)
    background_level: int = 40
    background_noise: int = 12
    texture_amplitude: int = 6
    tile_size: int = 300
    tile_margin: int = 4
    seed: int = 0


@dataclass(frozen=True)
class RiverSceneSpec:
    """Flood scene: one dark water band crossing bright land.

    The band is axis-aligned so the morphological clean-up is exact on the
    noiseless scene. impulse_fraction flips isolated pixels to the opposite
    class to exercise the morphology.
    """

    width: int = 1200
    height: int = 1200
    land_intensity: int = 180
    water_intensity: int = 30
    band_axis: str = "horizontal"
    band_center_frac: float = 0.5
    band_width_frac: float = 0.18
    noise_amplitude: int = 0
    impulse_fraction: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SyntheticScene:
    pixels: np.ndarray                     # uint8 (height, width)
    structures: list[Ring] = field(default_factory=list)
    water_mask: Optional[np.ndarray] = None

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def default_scene_geotransform(pixel_size: float = 1.0,
                               origin: tuple[float, float] = (0.0, 0.0)) -> GeoTransform:
    """North-up metric geotransform placing the scene near the CRS origin."""
    return GeoTransform(origin[0], pixel_size, 0.0, origin[1], 0.0, -pixel_size)


def _background(width: int, height: int, level: int, noise: int,
                texture: int, rng: np.random.Generator) -> np.ndarray:
    base = np.full((height, width), float(level))
    if texture > 0:
        yy = np.linspace(0.0, 3.0 * np.pi, height)[:, None]
        xx = np.linspace(0.0, 2.0 * np.pi, width)[None, :]
        base += texture * 0.5 * (np.sin(yy) + np.cos(xx))
    if noise > 0:
        base += rng.integers(-noise, noise + 1, size=(height, width))
    return np.clip(np.floor(base + 0.5), 0, 255).astype(np.uint8)


def generate_camp_scene(spec: CampSceneSpec) -> SyntheticScene:
    """Place spec.n_structures non-overlapping rectangles; gt is exact."""
    rng = np.random.default_rng(spec.seed)
    if spec.width <= 0 or spec.height <= 0:
        raise ValidationError("scene dimensions must be positive")
    lo, hi = spec.size_range
    if lo < 2 or hi < lo:
        raise ValidationError("structure size range invalid")

    pixels = _background(spec.width, spec.height, spec.background_level,
                         spec.background_noise, spec.texture_amplitude, rng)
    occupied = np.zeros_like(pixels, dtype=bool)

    n_dim = int(round(spec.dim_fraction * spec.n_structures))
    dim_flags = np.zeros(spec.n_structures, dtype=bool)
    dim_flags[:n_dim] = True
    rng.shuffle(dim_flags)

    structures: list[Ring] = []
    ts, margin = spec.tile_size, spec.tile_margin
    attempts_left = 400 * max(spec.n_structures, 1)
    placed = 0
    while placed < spec.n_structures:
        if attempts_left <= 0:
            raise ValidationError(
                f"could not place {spec.n_structures} structures without overlap")
        attempts_left -= 1
        sw = int(rng.integers(lo, hi + 1))
        sh = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(0, max(spec.width - sw, 1)))
        y0 = int(rng.integers(0, max(spec.height - sh, 1)))
        # Keep each structure strictly inside one analysis tile, clear of
        # the tile border by the margin.
        if (x0 // ts) != ((x0 + sw - 1) // ts) or (y0 // ts) != ((y0 + sh - 1) // ts):
            continue
        if x0 % ts < margin or (x0 + sw - 1) % ts >= ts - margin:
            continue
        if y0 % ts < margin or (y0 + sh - 1) % ts >= ts - margin:
            continue
        # 2-pixel clearance so neighbours never 8-connect.
        gy0, gy1 = max(y0 - 2, 0), min(y0 + sh + 2, spec.height)
        gx0, gx1 = max(x0 - 2, 0), min(x0 + sw + 2, spec.width)
        if occupied[gy0:gy1, gx0:gx1].any():
            continue
        if dim_flags[placed]:
            value = int(rng.integers(spec.dim_intensity[0], spec.dim_intensity[1] + 1))
        else:
            value = int(rng.integers(spec.bright_intensity[0], spec.bright_intensity[1] + 1))
        pixels[y0:y0 + sh, x0:x0 + sw] = value
        occupied[y0:y0 + sh, x0:x0 + sw] = True
        structures.append([(float(x0), float(y0)), (float(x0 + sw), float(y0)),
                           (float(x0 + sw), float(y0 + sh)), (float(x0), float(y0 + sh)),
                           (float(x0), float(y0))])
        placed += 1
    return SyntheticScene(pixels=pixels, structures=structures)


def generate_river_scene(spec: RiverSceneSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    if spec.band_axis not in ("horizontal", "vertical"):
        raise ValidationError("band_axis must be horizontal or vertical")
    pixels = np.full((spec.height, spec.width), spec.land_intensity, dtype=np.int16)
    mask = np.zeros((spec.height, spec.width), dtype=bool)

    if spec.band_axis == "horizontal":
        half = max(int(spec.band_width_frac * spec.height / 2), 1)
        center = int(spec.band_center_frac * spec.height)
        r0, r1 = max(center - half, 0), min(center + half, spec.height)
        mask[r0:r1, :] = True
    else:
        half = max(int(spec.band_width_frac * spec.width / 2), 1)
        center = int(spec.band_center_frac * spec.width)
        c0, c1 = max(center - half, 0), min(center + half, spec.width)
        mask[:, c0:c1] = True
    pixels[mask] = spec.water_intensity

    if spec.noise_amplitude > 0:
        pixels += rng.integers(-spec.noise_amplitude, spec.noise_amplitude + 1,
                               size=pixels.shape).astype(np.int16)
    if spec.impulse_fraction > 0:
        flip = rng.random(pixels.shape) < spec.impulse_fraction
        pixels[flip & ~mask] = spec.water_intensity
        pixels[flip & mask] = spec.land_intensity
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    return SyntheticScene(pixels=pixels, water_mask=mask)


def generate_synthetic_scene(spec: CampSceneSpec | RiverSceneSpec) -> SyntheticScene:
    """Dispatch on the spec type; deterministic for a given spec."""
    if isinstance(spec, CampSceneSpec):
        return generate_camp_scene(spec)
    if isinstance(spec, RiverSceneSpec):
        return generate_river_scene(spec)
    raise ValidationError(f"unknown scene spec type {type(spec).__name__}")
