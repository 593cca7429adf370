/**
 * Client-side store: server records + pending optimistic corrections.
 *
 * The rendered overlay is a pure function of (confirmed server state,
 * pending ops): replaying the project event log from seq 0 reconstructs
 * exactly the same feature set, which is what makes reconnects safe.
 * Events are applied strictly in sequence order; duplicates (at-least-once
 * delivery) are dropped by their seq.
 */

import { Feature, Job, ServerEvent, TileStatus } from './types.js';

export interface PendingCorrection {
  /** Local handle until the server responds. */
  key: string;
  action: 'accept' | 'reject' | 'add' | 'modify';
  featureId?: string;
  geometry?: [number, number][];
  tile?: [number, number];
}

export class ClientStore {
  features = new Map<string, Feature>();
  tiles = new Map<string, TileStatus>();
  jobs = new Map<string, Job>();
  pending = new Map<string, PendingCorrection>();
  lastSeq = 0;
  /** Bumped when models or sets change server-side (panels refetch). */
  modelsDirty = 0;
  setsDirty = 0;

  private nextKey = 1;

  applyEvent(event: ServerEvent): boolean {
    if (event.seq <= this.lastSeq) {
      return false; // duplicate delivery
    }
    this.lastSeq = event.seq;
    switch (event.type) {
      case 'feature.updated': {
        const feature = event.payload.feature as unknown as Feature;
        this.features.set(feature.id, feature);
        break;
      }
      case 'feature.removed': {
        this.features.delete(event.payload.id as string);
        break;
      }
      case 'tile.reviewed': {
        const tile = event.payload.tile as [number, number];
        this.tiles.set(`${tile[0]},${tile[1]}`,
          event.payload.status as unknown as TileStatus);
        break;
      }
      case 'job.updated': {
        const job = event.payload.job as unknown as Job;
        const prev = this.jobs.get(job.id);
        // Progress must never appear to move backwards mid-run.
        if (prev && job.state === prev.state && job.progress < prev.progress) {
          job.progress = prev.progress;
        }
        this.jobs.set(job.id, job);
        break;
      }
      case 'model.created': {
        this.modelsDirty += 1;
        break;
      }
      case 'set.created': {
        this.setsDirty += 1;
        break;
      }
      default:
        break;
    }
    return true;
  }

  /** Start an optimistic correction; returns its local key. */
  beginCorrection(op: Omit<PendingCorrection, 'key'>): string {
    const key = `op-${this.nextKey++}`;
    this.pending.set(key, { ...op, key });
    return key;
  }

  /** Server confirmed the correction (response arrived). */
  confirmCorrection(key: string, confirmed: Feature): void {
    this.pending.delete(key);
    this.features.set(confirmed.id, confirmed);
  }

  /** Server rejected the correction; the optimistic overlay is dropped. */
  revertCorrection(key: string): void {
    this.pending.delete(key);
  }

  /**
   * Features as they should be rendered: confirmed state overlaid with
   * pending ops, plus not-yet-confirmed additions.
   */
  visibleFeatures(): Feature[] {
    const out = new Map<string, Feature>();
    for (const [id, feature] of this.features) {
      out.set(id, feature);
    }
    for (const op of this.pending.values()) {
      if (op.action === 'add') {
        out.set(op.key, {
          id: op.key,
          set_id: '',
          geometry: op.geometry ?? [],
          source: 'analyst',
          state: 'added',
          version: 0,
          last_editor: 'me',
          tile_index: op.tile ?? [0, 0],
          classification: null,
        });
        continue;
      }
      const target = op.featureId ? out.get(op.featureId) : undefined;
      if (!target) {
        continue;
      }
      if (op.action === 'accept') {
        out.set(target.id, { ...target, state: 'accepted' });
      } else if (op.action === 'reject') {
        out.set(target.id, { ...target, state: 'rejected' });
      } else if (op.action === 'modify' && op.geometry) {
        out.set(target.id, {
          ...target,
          geometry: op.geometry,
          state: target.state === 'proposed' ? 'accepted' : target.state,
        });
      }
    }
    return [...out.values()];
  }

  reviewedTiles(): [number, number][] {
    const out: [number, number][] = [];
    for (const [key, status] of this.tiles) {
      if (status.review === 'reviewed') {
        const [c, r] = key.split(',').map(Number);
        out.push([c, r]);
      }
    }
    return out.sort((a, b) => (a[0] - b[0]) || (a[1] - b[1]));
  }

  /** Rebuild a store purely from an event log (reconnect path). */
  static replay(events: ServerEvent[]): ClientStore {
    const store = new ClientStore();
    for (const event of events) {
      store.applyEvent(event);
    }
    return store;
  }
}

/** Stable rendering digest used to compare two stores' overlays. */
export function overlayDigest(store: ClientStore): string {
  const parts = store.visibleFeatures()
    .map((f) => `${f.id}:${f.state}:${f.version}:${JSON.stringify(f.geometry)}`)
    .sort();
  return parts.join('|');
}
