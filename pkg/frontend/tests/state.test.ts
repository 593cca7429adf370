import { describe, expect, it } from 'vitest';

import { ClientStore, overlayDigest } from '../src/state.js';
import { Feature, ServerEvent } from '../src/types.js';

let seq = 0;

function evt(type: string, payload: Record<string, unknown>): ServerEvent {
  seq += 1;
  return { seq, type, payload, ts: 1000 + seq };
}

function feature(id: string, overrides: Partial<Feature> = {}): Feature {
  return {
    id,
    set_id: 'set-1',
    geometry: [[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]],
    source: 'model',
    state: 'proposed',
    version: 1,
    last_editor: 'model:m',
    tile_index: [0, 0],
    classification: null,
    ...overrides,
  };
}

describe('event application', () => {
  it('applies feature updates and removals', () => {
    seq = 0;
    const store = new ClientStore();
    store.applyEvent(evt('feature.updated', { feature: feature('f1') }));
    store.applyEvent(evt('feature.updated', {
      feature: feature('f1', { state: 'accepted', version: 2 }),
    }));
    expect(store.features.get('f1')?.state).toBe('accepted');
    store.applyEvent(evt('feature.removed', { id: 'f1', set_id: 'set-1' }));
    expect(store.features.has('f1')).toBe(false);
  });

  it('drops duplicate deliveries by sequence number', () => {
    seq = 0;
    const store = new ClientStore();
    const event = evt('feature.updated', { feature: feature('f1') });
    expect(store.applyEvent(event)).toBe(true);
    expect(store.applyEvent(event)).toBe(false);
    expect(store.lastSeq).toBe(1);
  });

  it('tracks tile review status', () => {
    seq = 0;
    const store = new ClientStore();
    store.applyEvent(evt('tile.reviewed', {
      set_id: 'set-1', tile: [2, 1],
      status: { review: 'reviewed', state: 'corrected' },
    }));
    expect(store.reviewedTiles()).toEqual([[2, 1]]);
  });

  it('keeps job progress non-decreasing within a run', () => {
    seq = 0;
    const store = new ClientStore();
    const base = { id: 'j1', kind: 'infer', attempts: 0, result: null, error: null };
    store.applyEvent(evt('job.updated', { job: { ...base, state: 'running', progress: 0.6 } }));
    store.applyEvent(evt('job.updated', { job: { ...base, state: 'running', progress: 0.4 } }));
    expect(store.jobs.get('j1')?.progress).toBe(0.6);
  });
});

describe('replaying the event log', () => {
  it('reconstructs exactly the same overlay as live application', () => {
    seq = 0;
    const events = [
      evt('feature.updated', { feature: feature('f1') }),
      evt('feature.updated', { feature: feature('f2') }),
      evt('feature.updated', {
        feature: feature('f1', { state: 'rejected', version: 2 }),
      }),
      evt('feature.updated', {
        feature: feature('f2', {
          state: 'accepted', version: 2,
          geometry: [[5, 5], [20, 5], [20, 20], [5, 20], [5, 5]],
        }),
      }),
      evt('feature.removed', { id: 'f1', set_id: 'set-1' }),
      evt('tile.reviewed', {
        set_id: 'set-1', tile: [0, 0],
        status: { review: 'reviewed', state: 'corrected' },
      }),
    ];
    const live = new ClientStore();
    for (const event of events) {
      live.applyEvent(event);
    }
    const replayed = ClientStore.replay(events);
    expect(overlayDigest(replayed)).toBe(overlayDigest(live));
    expect(replayed.reviewedTiles()).toEqual(live.reviewedTiles());
  });
});

describe('optimistic corrections', () => {
  it('overlays pending ops and reconciles on the server response', () => {
    seq = 0;
    const store = new ClientStore();
    store.applyEvent(evt('feature.updated', { feature: feature('f1') }));
    const key = store.beginCorrection({ action: 'reject', featureId: 'f1' });
    expect(store.visibleFeatures()[0].state).toBe('rejected');
    // Server response wins (carries the authoritative version).
    store.confirmCorrection(key, feature('f1', { state: 'rejected', version: 2 }));
    expect(store.pending.size).toBe(0);
    expect(store.features.get('f1')?.version).toBe(2);
  });

  it('a 422 reverts the optimistic change', () => {
    seq = 0;
    const store = new ClientStore();
    store.applyEvent(evt('feature.updated', { feature: feature('f1') }));
    const key = store.beginCorrection({ action: 'accept', featureId: 'f1' });
    expect(store.visibleFeatures()[0].state).toBe('accepted');
    store.revertCorrection(key);
    expect(store.visibleFeatures()[0].state).toBe('proposed');
  });

  it('renders pending additions before the server confirms', () => {
    seq = 0;
    const store = new ClientStore();
    const ring: [number, number][] = [[1, 1], [4, 1], [4, 4], [1, 4], [1, 1]];
    const key = store.beginCorrection({ action: 'add', geometry: ring, tile: [0, 0] });
    const drawn = store.visibleFeatures();
    expect(drawn).toHaveLength(1);
    expect(drawn[0].state).toBe('added');
    store.confirmCorrection(key, feature('f-real', {
      source: 'analyst', state: 'added', geometry: ring,
    }));
    expect(store.visibleFeatures().map((f) => f.id)).toEqual(['f-real']);
  });

  it('modify promotes a bare proposal to accepted in the preview', () => {
    seq = 0;
    const store = new ClientStore();
    store.applyEvent(evt('feature.updated', { feature: feature('f1') }));
    store.beginCorrection({
      action: 'modify', featureId: 'f1',
      geometry: [[2, 2], [8, 2], [8, 8], [2, 8], [2, 2]],
    });
    const preview = store.visibleFeatures()[0];
    expect(preview.state).toBe('accepted');
    expect(preview.geometry[0]).toEqual([2, 2]);
  });
});
