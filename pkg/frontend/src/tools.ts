/**
 * Correction tools: every confirmed gesture becomes exactly one POSTed
 * correction. The gesture applies optimistically; the server response (or
 * a 422) reconciles or reverts it, and the feature.updated WS event is the
 * final word (server version wins).
 */

import { ApiClient, ApiError } from './api.js';
import { ClientStore } from './state.js';
import { MapView } from './map.js';
import { Feature } from './types.js';

const ANALYSIS_TILE = 300;

export type Notice = (message: string, isError?: boolean) => void;

export class CorrectionTools {
  constructor(private api: ApiClient, private store: ClientStore,
              private map: MapView, private setId: () => string | null,
              private notify: Notice, private requestRender: () => void) {}

  async click(sx: number, sy: number): Promise<void> {
    const tool = this.map.view.tool;
    if (tool === 'accept' || tool === 'reject') {
      const hit = this.map.hitTest(this.store.visibleFeatures(), sx, sy);
      if (hit) {
        await this.acceptOrReject(tool, hit);
      }
      return;
    }
    if (tool === 'draw') {
      const px = this.map.screenToRasterPixel(sx, sy);
      if (px) {
        this.map.draftRing.push([px[0], px[1]]);
        this.requestRender();
      }
    }
  }

  private async acceptOrReject(action: 'accept' | 'reject',
                               feature: Feature): Promise<void> {
    const setId = this.setId();
    if (!setId) {
      return;
    }
    const key = this.store.beginCorrection({ action, featureId: feature.id });
    this.requestRender();
    try {
      const confirmed = await this.api.postCorrection(setId, {
        action,
        feature_id: feature.id,
        basis_version: feature.version,
      });
      this.store.confirmCorrection(key, confirmed);
    } catch (err) {
      this.store.revertCorrection(key);
      this.notify(`${action} failed: ${(err as ApiError).message}`, true);
    }
    this.requestRender();
  }

  /** Close and submit the draw-tool draft polygon. */
  async finishDraft(): Promise<void> {
    const setId = this.setId();
    const ring = this.map.draftRing;
    this.map.draftRing = [];
    if (!setId || ring.length === 0) {
      this.requestRender();
      return;
    }
    // Degenerate rings are blocked client-side before any request.
    const unique = new Set(ring.map(([x, y]) => `${x},${y}`));
    if (unique.size < 3) {
      this.notify('a polygon needs at least 3 distinct points', true);
      this.requestRender();
      return;
    }
    const closed: [number, number][] = [...ring, ring[0]];
    const tile: [number, number] = [
      Math.floor(Math.min(...ring.map((p) => p[0])) / ANALYSIS_TILE),
      Math.floor(Math.min(...ring.map((p) => p[1])) / ANALYSIS_TILE),
    ];
    const key = this.store.beginCorrection({ action: 'add', geometry: closed, tile });
    this.requestRender();
    try {
      const confirmed = await this.api.postCorrection(setId, {
        action: 'add',
        tile_index: tile,
        new_geometry: closed,
      });
      this.store.confirmCorrection(key, confirmed);
    } catch (err) {
      this.store.revertCorrection(key);
      this.notify(`add failed: ${(err as ApiError).message}`, true);
    }
    this.requestRender();
  }

  /** Replace a feature's geometry (modify tool applies a dragged ring). */
  async modify(feature: Feature, geometry: [number, number][]): Promise<void> {
    const setId = this.setId();
    if (!setId) {
      return;
    }
    const key = this.store.beginCorrection({
      action: 'modify', featureId: feature.id, geometry,
    });
    this.requestRender();
    try {
      const confirmed = await this.api.postCorrection(setId, {
        action: 'modify',
        feature_id: feature.id,
        new_geometry: geometry,
        basis_version: feature.version,
      });
      this.store.confirmCorrection(key, confirmed);
    } catch (err) {
      this.store.revertCorrection(key);
      this.notify(`modify failed: ${(err as ApiError).message}`, true);
    }
    this.requestRender();
  }

  async markTileReviewed(tile: [number, number]): Promise<number | null> {
    const setId = this.setId();
    if (!setId) {
      return null;
    }
    try {
      const resp = await this.api.markReviewed(setId, tile);
      return resp.reviewed_fraction;
    } catch (err) {
      this.notify(`review failed: ${(err as ApiError).message}`, true);
      return null;
    }
  }
}
