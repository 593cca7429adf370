/** Application wiring: session, event stream, map, tools, panels. */

import { ApiClient, EventStream } from './api.js';
import { ClientStore } from './state.js';
import { MapView } from './map.js';
import { CorrectionTools } from './tools.js';
import { JobsPanel, MetricsPanel, ModelPanel } from './panels.js';
import { Tool } from './types.js';

export class App {
  api!: ApiClient;
  store = new ClientStore();
  map!: MapView;
  tools!: CorrectionTools;
  modelPanel!: ModelPanel;
  jobsPanel!: JobsPanel;
  metricsPanel!: MetricsPanel;
  stream: EventStream | null = null;
  activeSetId: string | null = null;
  projectId: string | null = null;

  private renderQueued = false;
  private dragging = false;
  private lastDrag: [number, number] = [0, 0];

  start(root: Document): void {
    const canvas = root.getElementById('map') as HTMLCanvasElement;
    const form = root.getElementById('connect-form') as HTMLFormElement;
    form.onsubmit = (ev) => {
      ev.preventDefault();
      const base = (root.getElementById('server') as HTMLInputElement).value
        || window.location.origin;
      const token = (root.getElementById('token') as HTMLInputElement).value;
      const project = (root.getElementById('project') as HTMLInputElement).value;
      this.connect(base.replace(/\/$/, ''), token, project).catch((err) => {
        this.notify(String(err), true);
      });
    };
    this.setupCanvas(canvas);
    this.setupToolbar(root);
  }

  async connect(baseUrl: string, token: string, projectId: string): Promise<void> {
    this.api = new ApiClient(baseUrl, token);
    const project = await this.api.getProject(projectId);
    this.projectId = projectId;
    this.notify(`connected to project "${project.name}"`);

    const canvas = document.getElementById('map') as HTMLCanvasElement;
    this.map = new MapView(canvas, this.api, () => this.requestRender());
    this.tools = new CorrectionTools(this.api, this.store, this.map,
      () => this.activeSetId, (m, e) => this.notify(m, e),
      () => this.requestRender());
    this.modelPanel = new ModelPanel(
      document.getElementById('panel-models') as HTMLElement, this.api,
      this.store, (parentId) => this.submitAdapt(parentId));
    this.jobsPanel = new JobsPanel(
      document.getElementById('panel-jobs') as HTMLElement);
    this.metricsPanel = new MetricsPanel(
      document.getElementById('panel-metrics') as HTMLElement, this.api);

    if (project.raster_ids.length) {
      const raster = await this.api.raster(project.raster_ids[0]);
      this.map.showRaster(raster);
    }
    if (project.set_ids.length) {
      await this.openSet(project.set_ids[project.set_ids.length - 1]);
    }
    await this.modelPanel.refresh();

    this.stream?.close();
    this.stream = new EventStream(this.api, projectId, (event) => {
      const applied = this.store.applyEvent(event);
      if (!applied) {
        return;
      }
      if (event.type === 'model.created') {
        this.modelPanel.refresh();
      }
      if (event.type === 'job.updated') {
        this.jobsPanel.render(this.store);
      }
      this.updateStatusBar();
      this.requestRender();
    });
    this.stream.connect();
    this.requestRender();
  }

  async openSet(setId: string): Promise<void> {
    this.activeSetId = setId;
    const setData = await this.api.set(setId);
    this.store.features.clear();
    this.store.tiles.clear();
    for (const [key, status] of Object.entries(setData.tiles)) {
      this.store.tiles.set(key, status);
    }
    const { features } = await this.api.features(setId);
    for (const feature of features) {
      this.store.features.set(feature.id, feature);
    }
    if (!this.map.raster || this.map.raster.id !== setData.raster_id) {
      this.map.showRaster(await this.api.raster(setData.raster_id));
    }
    this.updateStatusBar();
    this.requestRender();
  }

  private async submitAdapt(parentId: string): Promise<void> {
    if (!this.activeSetId) {
      return;
    }
    const job = await this.api.submitJob('adapt', {
      parent_model_id: parentId,
      set_id: this.activeSetId,
    });
    this.notify(`adaptation job ${job.id} submitted`);
  }

  private setupCanvas(canvas: HTMLCanvasElement): void {
    canvas.onmousedown = (ev) => {
      if (this.map?.view.tool === 'pan') {
        this.dragging = true;
        this.lastDrag = [ev.offsetX, ev.offsetY];
      }
    };
    canvas.onmousemove = (ev) => {
      if (this.dragging) {
        this.map.panBy(ev.offsetX - this.lastDrag[0], ev.offsetY - this.lastDrag[1]);
        this.lastDrag = [ev.offsetX, ev.offsetY];
      }
    };
    canvas.onmouseup = () => {
      this.dragging = false;
    };
    canvas.onclick = (ev) => {
      if (this.map && this.map.view.tool !== 'pan') {
        this.tools.click(ev.offsetX, ev.offsetY);
      }
    };
    canvas.ondblclick = () => {
      if (this.map?.view.tool === 'draw') {
        this.tools.finishDraft();
      }
    };
    canvas.onwheel = (ev) => {
      ev.preventDefault();
      this.map?.zoomBy(ev.deltaY < 0 ? 1 : -1);
    };
  }

  private setupToolbar(root: Document): void {
    for (const tool of ['pan', 'accept', 'reject', 'draw', 'modify'] as Tool[]) {
      const button = root.getElementById(`tool-${tool}`) as HTMLButtonElement | null;
      if (button) {
        button.onclick = () => {
          if (this.map) {
            this.map.view.tool = tool;
            this.updateStatusBar();
          }
        };
      }
    }
    const rejectedToggle = root.getElementById('toggle-rejected') as HTMLInputElement | null;
    if (rejectedToggle) {
      rejectedToggle.onchange = () => {
        if (this.map) {
          this.map.view.layers.rejected = rejectedToggle.checked;
          this.requestRender();
        }
      };
    }
  }

  private updateStatusBar(): void {
    const bar = document.getElementById('status');
    if (!bar || !this.activeSetId) {
      return;
    }
    const total = this.store.tiles.size || 1;
    const reviewed = this.store.reviewedTiles().length;
    bar.textContent = `tool: ${this.map?.view.tool ?? '-'} | reviewed tiles: `
      + `${reviewed}/${total} (${((reviewed / total) * 100).toFixed(0)}%)`;
  }

  private notify(message: string, isError = false): void {
    const el = document.getElementById('notice');
    if (el) {
      el.textContent = message;
      el.className = isError ? 'notice error' : 'notice';
    }
  }

  requestRender(): void {
    if (this.renderQueued || !this.map) {
      return;
    }
    this.renderQueued = true;
    requestAnimationFrame(() => {
      this.renderQueued = false;
      const reviewed = new Set(this.store.reviewedTiles().map(([c, r]) => `${c},${r}`));
      this.map.render(this.store.visibleFeatures(), reviewed);
    });
  }
}

if (typeof document !== 'undefined' && document.getElementById('map')) {
  new App().start(document);
}
