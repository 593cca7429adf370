import { describe, expect, it } from 'vitest';

import {
  MERCATOR_EXTENT, lonLatToMercator, mercatorToLonLat, mercatorToPixel,
  pixelToMercator, pointInRing, rasterBounds, resolution,
} from '../src/geo.js';
import { RasterMeta } from '../src/types.js';

const RASTER_3857: RasterMeta = {
  id: 'r1', width: 600, height: 400, crs: 3857,
  geotransform: [1000, 2, 0, 5000, 0, -2], pyramid_zooms: [0, 1, 2],
  project_id: null,
};

describe('mercator math', () => {
  it('origin maps to origin', () => {
    const [x, y] = lonLatToMercator(0, 0);
    expect(x).toBeCloseTo(0, 6);
    expect(y).toBeCloseTo(0, 6);
  });

  it('round trips', () => {
    const [x, y] = lonLatToMercator(12.5, -33.2);
    const [lon, lat] = mercatorToLonLat(x, y);
    expect(lon).toBeCloseTo(12.5, 9);
    expect(lat).toBeCloseTo(-33.2, 9);
  });

  it('world edge is the mercator extent', () => {
    const [x] = lonLatToMercator(180, 0);
    expect(x).toBeCloseTo(MERCATOR_EXTENT, 3);
  });

  it('resolution halves per zoom', () => {
    expect(resolution(5)).toBeCloseTo(resolution(4) / 2, 9);
  });
});

describe('raster pixel projection', () => {
  it('applies the geotransform per the server convention', () => {
    expect(pixelToMercator(RASTER_3857, 0, 0)).toEqual([1000, 5000]);
    expect(pixelToMercator(RASTER_3857, 10, 20)).toEqual([1020, 4960]);
  });

  it('inverts exactly', () => {
    const [col, row] = mercatorToPixel(RASTER_3857, 1020, 4960);
    expect(col).toBeCloseTo(10, 9);
    expect(row).toBeCloseTo(20, 9);
  });

  it('handles EPSG:4326 rasters through the mercator conversion', () => {
    const raster: RasterMeta = {
      ...RASTER_3857, crs: 4326, geotransform: [10, 0.01, 0, 50, 0, -0.01],
    };
    const [mx, my] = pixelToMercator(raster, 100, 100);
    const [lon, lat] = mercatorToLonLat(mx, my);
    expect(lon).toBeCloseTo(11, 9);
    expect(lat).toBeCloseTo(49, 9);
    const [col, row] = mercatorToPixel(raster, mx, my);
    expect(col).toBeCloseTo(100, 6);
    expect(row).toBeCloseTo(100, 6);
  });

  it('computes footprint bounds', () => {
    const [minX, minY, maxX, maxY] = rasterBounds(RASTER_3857);
    expect([minX, minY, maxX, maxY]).toEqual([1000, 4200, 2200, 5000]);
  });
});

describe('point in ring', () => {
  const square: [number, number][] = [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]];

  it('detects interior and exterior points', () => {
    expect(pointInRing(5, 5, square)).toBe(true);
    expect(pointInRing(15, 5, square)).toBe(false);
    expect(pointInRing(-1, -1, square)).toBe(false);
  });

  it('works for concave rings', () => {
    const lShape: [number, number][] = [
      [0, 0], [10, 0], [10, 4], [4, 4], [4, 10], [0, 10], [0, 0],
    ];
    expect(pointInRing(2, 8, lShape)).toBe(true);
    expect(pointInRing(8, 8, lShape)).toBe(false);
  });
});
