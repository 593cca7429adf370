/** Client-side projection math mirroring the server contracts. */

import { RasterMeta } from './types.js';

export const MERCATOR_RADIUS = 6378137.0;
export const MERCATOR_EXTENT = Math.PI * MERCATOR_RADIUS;
export const TILE_SIZE = 256;

export function lonLatToMercator(lon: number, lat: number): [number, number] {
  const x = MERCATOR_RADIUS * (lon * Math.PI / 180);
  const y = MERCATOR_RADIUS * Math.log(Math.tan(Math.PI / 4 + (lat * Math.PI / 180) / 2));
  return [x, y];
}

export function mercatorToLonLat(x: number, y: number): [number, number] {
  const lon = (x / MERCATOR_RADIUS) * 180 / Math.PI;
  const lat = (2 * Math.atan(Math.exp(y / MERCATOR_RADIUS)) - Math.PI / 2) * 180 / Math.PI;
  return [lon, lat];
}

/** Metres per display-tile pixel at a zoom level. */
export function resolution(zoom: number): number {
  return (2 * MERCATOR_EXTENT) / (Math.pow(2, zoom) * TILE_SIZE);
}

/** Raster pixel coordinates -> EPSG:3857, via the raster's geotransform. */
export function pixelToMercator(raster: RasterMeta, col: number, row: number): [number, number] {
  const [ox, pw, rr, oy, cr, ph] = raster.geotransform;
  const gx = ox + col * pw + row * rr;
  const gy = oy + col * cr + row * ph;
  if (raster.crs === 4326) {
    return lonLatToMercator(gx, gy);
  }
  return [gx, gy];
}

/** EPSG:3857 -> raster pixel coordinates (inverse of pixelToMercator). */
export function mercatorToPixel(raster: RasterMeta, mx: number, my: number): [number, number] {
  let gx = mx;
  let gy = my;
  if (raster.crs === 4326) {
    [gx, gy] = mercatorToLonLat(mx, my);
  }
  const [ox, pw, rr, oy, cr, ph] = raster.geotransform;
  const det = pw * ph - rr * cr;
  const dx = gx - ox;
  const dy = gy - oy;
  return [(ph * dx - rr * dy) / det, (pw * dy - cr * dx) / det];
}

/** Mercator bounds of the raster footprint. */
export function rasterBounds(raster: RasterMeta): [number, number, number, number] {
  const corners: [number, number][] = [
    pixelToMercator(raster, 0, 0),
    pixelToMercator(raster, raster.width, 0),
    pixelToMercator(raster, 0, raster.height),
    pixelToMercator(raster, raster.width, raster.height),
  ];
  const xs = corners.map((c) => c[0]);
  const ys = corners.map((c) => c[1]);
  return [Math.min(...xs), Math.min(...ys), Math.max(...xs), Math.max(...ys)];
}

/** Ray-casting point-in-ring test (screen or pixel space). */
export function pointInRing(x: number, y: number, ring: [number, number][]): boolean {
  let inside = false;
  const pts = ring.length > 1 && ring[0][0] === ring[ring.length - 1][0]
    && ring[0][1] === ring[ring.length - 1][1] ? ring.slice(0, -1) : ring;
  for (let i = 0, j = pts.length - 1; i < pts.length; j = i++) {
    const [xi, yi] = pts[i];
    const [xj, yj] = pts[j];
    if ((yi > y) !== (yj > y) && x < ((xj - xi) * (y - yi)) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}
