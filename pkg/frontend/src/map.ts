/**
 * Canvas map view: imagery tiles underneath, feature overlays on top.
 *
 * Imagery comes from the XYZ tile endpoint; failed tile fetches draw a
 * placeholder and never block interaction. Feature geometry lives in
 * raster pixel coordinates and is projected through the raster
 * geotransform to EPSG:3857, then to screen space.
 */

import { featureColor } from './colors.js';
import {
  MERCATOR_EXTENT, TILE_SIZE, mercatorToPixel, pixelToMercator, pointInRing,
  rasterBounds, resolution,
} from './geo.js';
import { ApiClient } from './api.js';
import { Feature, RasterMeta, ViewState } from './types.js';

const ANALYSIS_TILE = 300;

export class MapView {
  view: ViewState = {
    rasterId: null,
    centerX: 0,
    centerY: 0,
    zoom: 2,
    layers: { imagery: true, detections: true, analyst: true, tileGrid: true, rejected: false },
    tool: 'pan',
  };
  raster: RasterMeta | null = null;
  /** Pending polygon vertices while the draw tool is active (pixel coords). */
  draftRing: [number, number][] = [];

  private tileCache = new Map<string, HTMLImageElement>();
  private failedTiles = new Set<string>();

  constructor(private canvas: HTMLCanvasElement, private api: ApiClient,
              private requestRender: () => void) {}

  showRaster(raster: RasterMeta): void {
    this.raster = raster;
    this.view.rasterId = raster.id;
    const [minX, minY, maxX, maxY] = rasterBounds(raster);
    this.view.centerX = (minX + maxX) / 2;
    this.view.centerY = (minY + maxY) / 2;
    const zooms = raster.pyramid_zooms;
    this.view.zoom = zooms.length ? zooms[Math.max(0, zooms.length - 2)] : 2;
    this.clampZoom();
    this.tileCache.clear();
    this.failedTiles.clear();
  }

  clampZoom(): void {
    const zooms = this.raster?.pyramid_zooms ?? [];
    if (zooms.length) {
      this.view.zoom = Math.min(Math.max(this.view.zoom, zooms[0]),
        zooms[zooms.length - 1]);
    }
  }

  zoomBy(delta: number): void {
    this.view.zoom += delta;
    this.clampZoom();
    this.requestRender();
  }

  panBy(dxPx: number, dyPx: number): void {
    const res = resolution(this.view.zoom);
    this.view.centerX -= dxPx * res;
    this.view.centerY += dyPx * res;
    this.requestRender();
  }

  /** Screen position of an EPSG:3857 coordinate. */
  toScreen(mx: number, my: number): [number, number] {
    const res = resolution(this.view.zoom);
    return [
      (mx - this.view.centerX) / res + this.canvas.width / 2,
      (this.view.centerY - my) / res + this.canvas.height / 2,
    ];
  }

  /** EPSG:3857 coordinate under a screen position. */
  fromScreen(sx: number, sy: number): [number, number] {
    const res = resolution(this.view.zoom);
    return [
      (sx - this.canvas.width / 2) * res + this.view.centerX,
      this.view.centerY - (sy - this.canvas.height / 2) * res,
    ];
  }

  /** Raster pixel coordinate under a screen position. */
  screenToRasterPixel(sx: number, sy: number): [number, number] | null {
    if (!this.raster) {
      return null;
    }
    const [mx, my] = this.fromScreen(sx, sy);
    return mercatorToPixel(this.raster, mx, my);
  }

  /** Topmost feature whose polygon contains the screen position. */
  hitTest(features: Feature[], sx: number, sy: number): Feature | null {
    const px = this.screenToRasterPixel(sx, sy);
    if (!px) {
      return null;
    }
    for (let i = features.length - 1; i >= 0; i--) {
      const f = features[i];
      if (f.state === 'rejected' && !this.view.layers.rejected) {
        continue;
      }
      if (pointInRing(px[0], px[1], f.geometry)) {
        return f;
      }
    }
    return null;
  }

  render(features: Feature[], reviewed: Set<string>): void {
    const ctx = this.canvas.getContext('2d');
    if (!ctx) {
      return;
    }
    ctx.fillStyle = '#10141a';
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (!this.raster) {
      return;
    }
    if (this.view.layers.imagery) {
      this.drawTiles(ctx);
    }
    if (this.view.layers.tileGrid) {
      this.drawAnalysisGrid(ctx, reviewed);
    }
    this.drawFeatures(ctx, features);
    this.drawDraft(ctx);
  }

  private drawTiles(ctx: CanvasRenderingContext2D): void {
    const z = Math.round(this.view.zoom);
    const res = resolution(z);
    const n = Math.pow(2, z);
    const span = (2 * MERCATOR_EXTENT) / n;
    const halfW = (this.canvas.width / 2) * res;
    const halfH = (this.canvas.height / 2) * res;
    const minTx = Math.floor((this.view.centerX - halfW + MERCATOR_EXTENT) / span);
    const maxTx = Math.floor((this.view.centerX + halfW + MERCATOR_EXTENT) / span);
    const minTy = Math.floor((MERCATOR_EXTENT - (this.view.centerY + halfH)) / span);
    const maxTy = Math.floor((MERCATOR_EXTENT - (this.view.centerY - halfH)) / span);
    for (let tx = Math.max(0, minTx); tx <= Math.min(n - 1, maxTx); tx++) {
      for (let ty = Math.max(0, minTy); ty <= Math.min(n - 1, maxTy); ty++) {
        const tileMinX = -MERCATOR_EXTENT + tx * span;
        const tileMaxY = MERCATOR_EXTENT - ty * span;
        const [sx, sy] = this.toScreen(tileMinX, tileMaxY);
        const sizePx = span / res;
        const img = this.tileImage(z, tx, ty);
        if (img) {
          ctx.drawImage(img, sx, sy, sizePx, sizePx);
        } else {
          ctx.fillStyle = '#1a2028';
          ctx.fillRect(sx, sy, sizePx, sizePx);
        }
      }
    }
  }

  private tileImage(z: number, x: number, y: number): HTMLImageElement | null {
    const key = `${this.view.rasterId}/${z}/${x}/${y}`;
    if (this.failedTiles.has(key)) {
      return null;
    }
    const cached = this.tileCache.get(key);
    if (cached) {
      return cached.complete ? cached : null;
    }
    const img = new Image();
    img.onload = () => this.requestRender();
    img.onerror = () => {
      // Placeholder is drawn instead; interaction is never blocked.
      this.failedTiles.delete(key);
      this.tileCache.delete(key);
      this.failedTiles.add(key);
    };
    img.src = this.api.tileUrl(this.view.rasterId as string, z, x, y);
    this.tileCache.set(key, img);
    return null;
  }

  private ringToScreen(ring: [number, number][]): [number, number][] {
    const raster = this.raster as RasterMeta;
    return ring.map(([px, py]) => {
      const [mx, my] = pixelToMercator(raster, px, py);
      return this.toScreen(mx, my);
    });
  }

  private drawFeatures(ctx: CanvasRenderingContext2D, features: Feature[]): void {
    for (const feature of features) {
      const isAnalystLayer = feature.state === 'accepted' || feature.state === 'added';
      if (isAnalystLayer && !this.view.layers.analyst) {
        continue;
      }
      if (!isAnalystLayer && !this.view.layers.detections) {
        continue;
      }
      const color = featureColor(feature, this.view.layers.rejected);
      if (!color) {
        continue;
      }
      const pts = this.ringToScreen(feature.geometry);
      ctx.beginPath();
      pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
      ctx.closePath();
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      if (feature.state === 'rejected') {
        ctx.setLineDash([4, 4]);
      }
      ctx.stroke();
      ctx.setLineDash([]);
      ctx.globalAlpha = 0.12;
      ctx.fillStyle = color;
      ctx.fill();
      ctx.globalAlpha = 1.0;
    }
  }

  private drawAnalysisGrid(ctx: CanvasRenderingContext2D,
                           reviewed: Set<string>): void {
    const raster = this.raster as RasterMeta;
    ctx.strokeStyle = 'rgba(255,255,255,0.25)';
    ctx.lineWidth = 1;
    const cols = Math.ceil(raster.width / ANALYSIS_TILE);
    const rows = Math.ceil(raster.height / ANALYSIS_TILE);
    for (let c = 0; c < cols; c++) {
      for (let r = 0; r < rows; r++) {
        const x0 = c * ANALYSIS_TILE;
        const y0 = r * ANALYSIS_TILE;
        const x1 = Math.min(x0 + ANALYSIS_TILE, raster.width);
        const y1 = Math.min(y0 + ANALYSIS_TILE, raster.height);
        const corners = this.ringToScreen([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]);
        ctx.beginPath();
        corners.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
        ctx.closePath();
        ctx.stroke();
        if (reviewed.has(`${c},${r}`)) {
          // Reviewed badge in the tile's top-left corner.
          const [bx, by] = corners[0];
          ctx.fillStyle = '#2ecc40';
          ctx.fillRect(bx + 3, by + 3, 10, 10);
          ctx.fillStyle = '#10141a';
          ctx.font = '9px sans-serif';
          ctx.fillText('R', bx + 5, by + 12);
        }
      }
    }
  }

  private drawDraft(ctx: CanvasRenderingContext2D): void {
    if (this.draftRing.length === 0 || !this.raster) {
      return;
    }
    const pts = this.ringToScreen(this.draftRing);
    ctx.beginPath();
    pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
    ctx.strokeStyle = '#2ecc40';
    ctx.lineWidth = 1.5;
    ctx.setLineDash([6, 3]);
    ctx.stroke();
    ctx.setLineDash([]);
    for (const [x, y] of pts) {
      ctx.fillStyle = '#2ecc40';
      ctx.fillRect(x - 2, y - 2, 4, 4);
    }
  }
}
