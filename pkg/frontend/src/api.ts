/** Thin fetch/WebSocket wrapper for the platform API. */

import {
  DetectionSet, Feature, Job, MetricsReport, ModelNode, Project, RasterMeta,
  ServerEvent,
} from './types.js';

export interface CorrectionBody {
  action: 'accept' | 'reject' | 'add' | 'modify';
  feature_id?: string;
  tile_index?: [number, number];
  new_geometry?: [number, number][];
  basis_version?: number;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string, public token: string) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { 'Content-Type': 'application/json' } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!resp.ok) {
      let code = 'error';
      let message = resp.statusText;
      try {
        const payload = await resp.json();
        code = payload.error?.code ?? code;
        message = payload.error?.message ?? message;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp.json() as Promise<T>;
  }

  getProject(id: string): Promise<Project> {
    return this.call('GET', `/api/projects/${id}`);
  }

  models(task?: string): Promise<{ models: ModelNode[] }> {
    return this.call('GET', `/api/models${task ? `?task=${task}` : ''}`);
  }

  model(id: string): Promise<ModelNode> {
    return this.call('GET', `/api/models/${id}`);
  }

  adaptationRecord(modelId: string): Promise<Record<string, unknown>> {
    return this.call('GET', `/api/models/${modelId}/adaptation`);
  }

  raster(id: string): Promise<RasterMeta> {
    return this.call('GET', `/api/rasters/${id}`);
  }

  set(id: string): Promise<DetectionSet> {
    return this.call('GET', `/api/sets/${id}`);
  }

  features(setId: string, states?: string): Promise<{ features: Feature[] }> {
    const qs = states ? `?states=${states}` : '';
    return this.call('GET', `/api/sets/${setId}/features${qs}`);
  }

  postCorrection(setId: string, body: CorrectionBody): Promise<Feature> {
    return this.call('POST', `/api/sets/${setId}/corrections`, body);
  }

  markReviewed(setId: string, tile: [number, number]):
      Promise<{ reviewed_fraction: number }> {
    return this.call('POST', `/api/sets/${setId}/tiles/${tile[0]}/${tile[1]}/reviewed`);
  }

  submitJob(kind: string, payload: Record<string, unknown>): Promise<Job> {
    return this.call('POST', '/api/jobs', { kind, payload });
  }

  job(id: string): Promise<Job> {
    return this.call('GET', `/api/jobs/${id}`);
  }

  evaluate(setId: string, truthId: string): Promise<MetricsReport> {
    return this.call('GET', `/api/evaluate?set=${setId}&truth=${truthId}&mode=objects`);
  }

  tileUrl(rasterId: string, z: number, x: number, y: number): string {
    return `${this.baseUrl}/tiles/${rasterId}/${z}/${x}/${y}.png?token=${this.token}`;
  }

  wsUrl(projectId: string, after?: number): string {
    const ws = this.baseUrl.replace(/^http/, 'ws');
    const resume = after !== undefined ? `&after=${after}` : '';
    return `${ws}/ws?token=${this.token}&project=${projectId}${resume}`;
  }
}

export type EventHandler = (event: ServerEvent) => void;

/**
 * Project event stream with automatic resume: on reconnect it continues
 * from the last seen sequence number, so no event is lost or re-applied.
 */
export class EventStream {
  private socket: WebSocket | null = null;
  private closed = false;
  lastSeq: number;

  constructor(private api: ApiClient, private projectId: string,
              private onEvent: EventHandler, fromSeq = 0,
              private reconnectDelayMs = 500) {
    this.lastSeq = fromSeq;
  }

  connect(): void {
    if (this.closed) {
      return;
    }
    const socket = new WebSocket(this.api.wsUrl(this.projectId, this.lastSeq));
    this.socket = socket;
    socket.addEventListener('message', (msg: MessageEvent) => {
      const event = JSON.parse(String(msg.data)) as ServerEvent;
      if (event.seq > this.lastSeq) {
        this.lastSeq = event.seq;
        this.onEvent(event);
      }
    });
    socket.addEventListener('close', () => {
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    });
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }
}
