/** JSON shapes exchanged with the platform API. */

export type FeatureState = 'proposed' | 'accepted' | 'rejected' | 'added';
export type FeatureSource = 'model' | 'analyst';

export interface Feature {
  id: string;
  set_id: string;
  geometry: [number, number][];
  source: FeatureSource;
  state: FeatureState;
  version: number;
  last_editor: string;
  tile_index: [number, number];
  classification: string | null;
}

export interface TileStatus {
  review: 'unreviewed' | 'reviewed';
  state: 'unprocessed' | 'detected' | 'corrected';
}

export interface DetectionSet {
  id: string;
  raster_id: string;
  model_id: string | null;
  tiles: Record<string, TileStatus>;
  reviewed_fraction?: number;
}

export interface RasterMeta {
  id: string;
  width: number;
  height: number;
  crs: number;
  geotransform: [number, number, number, number, number, number];
  pyramid_zooms: number[];
  project_id: string | null;
}

export interface ModelNode {
  id: string;
  name: string;
  task: 'structures' | 'flood';
  parent_id: string | null;
  params: Record<string, unknown>;
  created_from: string | null;
  deleted: boolean;
  children: ModelNode[];
}

export interface Job {
  id: string;
  kind: string;
  state: string;
  attempts: number;
  progress: number;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface MetricsReport {
  completion_rate: number | null;
  user_accuracy: number | null;
  f1: number | null;
  pixel_accuracy: number | null;
  counts: { n_gt: number; n_det: number; n_matched: number };
}

/** One entry of the per-project event stream. */
export interface ServerEvent {
  seq: number;
  type: string;
  payload: Record<string, unknown>;
  ts: number;
}

export interface Project {
  id: string;
  name: string;
  raster_ids: string[];
  set_ids: string[];
  members: string[];
}

export type Tool = 'pan' | 'accept' | 'reject' | 'draw' | 'modify';

export interface ViewState {
  rasterId: string | null;
  /** EPSG:3857 centre of the viewport. */
  centerX: number;
  centerY: number;
  zoom: number;
  layers: { imagery: boolean; detections: boolean; analyst: boolean; tileGrid: boolean; rejected: boolean };
  tool: Tool;
}
