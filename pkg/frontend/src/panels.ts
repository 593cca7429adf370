/** Side panels: model hierarchy, job feed, and on-the-fly metrics. */

import { ApiClient, ApiError } from './api.js';
import { ClientStore } from './state.js';
import { Job, MetricsReport, ModelNode } from './types.js';

export class ModelPanel {
  selectedModelId: string | null = null;
  private onSelect: ((id: string) => void) | null = null;

  constructor(private root: HTMLElement, private api: ApiClient,
              private store: ClientStore,
              private submitAdapt: (parentId: string) => void) {}

  select(cb: (id: string) => void): void {
    this.onSelect = cb;
  }

  async refresh(): Promise<void> {
    const { models } = await this.api.models('structures');
    this.root.replaceChildren();
    const title = document.createElement('h3');
    title.textContent = 'Models';
    this.root.appendChild(title);
    const list = document.createElement('ul');
    list.className = 'model-tree';
    for (const node of models) {
      list.appendChild(this.renderNode(node));
    }
    this.root.appendChild(list);
    this.root.appendChild(this.renderAdaptAction());
  }

  private renderNode(node: ModelNode): HTMLElement {
    const item = document.createElement('li');
    const label = document.createElement('span');
    label.textContent = node.deleted ? `${node.name} (deleted)` : node.name;
    label.className = 'model-name' + (node.id === this.selectedModelId ? ' selected' : '')
      + (node.deleted ? ' deleted' : '');
    label.onclick = () => {
      this.selectedModelId = node.id;
      this.onSelect?.(node.id);
      this.refresh();
      if (node.created_from) {
        this.showAdaptationRecord(node.id);
      }
    };
    item.appendChild(label);
    if (node.children.length) {
      const children = document.createElement('ul');
      for (const child of node.children) {
        children.appendChild(this.renderNode(child));
      }
      item.appendChild(children);
    }
    return item;
  }

  private renderAdaptAction(): HTMLElement {
    const wrap = document.createElement('div');
    const button = document.createElement('button');
    button.textContent = 'Adapt from reviewed tiles';
    const reviewed = this.store.reviewedTiles().length;
    const ready = reviewed > 0 && this.selectedModelId !== null;
    button.disabled = !ready;
    button.title = ready
      ? `train on ${reviewed} reviewed tile(s)`
      : 'review at least one tile and select a model first';
    button.onclick = () => {
      if (this.selectedModelId) {
        this.submitAdapt(this.selectedModelId);
      }
    };
    wrap.appendChild(button);
    return wrap;
  }

  private async showAdaptationRecord(modelId: string): Promise<void> {
    try {
      const record = await this.api.adaptationRecord(modelId);
      const before = (record.before_metrics as { f1?: number })?.f1;
      const after = (record.after_metrics as { f1?: number })?.f1;
      const info = document.createElement('p');
      info.className = 'adaptation-record';
      info.textContent = `adapted: F1 ${before?.toFixed(3)} -> ${after?.toFixed(3)}`;
      this.root.appendChild(info);
    } catch (err) {
      if (!(err instanceof ApiError)) {
        throw err;
      }
    }
  }
}

export class JobsPanel {
  constructor(private root: HTMLElement) {}

  render(store: ClientStore): void {
    this.root.replaceChildren();
    const title = document.createElement('h3');
    title.textContent = 'Jobs';
    this.root.appendChild(title);
    const jobs = [...store.jobs.values()].slice(-8).reverse();
    for (const job of jobs) {
      this.root.appendChild(this.renderJob(job));
    }
  }

  private renderJob(job: Job): HTMLElement {
    const row = document.createElement('div');
    row.className = `job job-${job.state}`;
    const label = document.createElement('span');
    label.textContent = `${job.kind} ${job.state}`;
    row.appendChild(label);
    const bar = document.createElement('progress');
    bar.max = 1;
    bar.value = job.progress;
    row.appendChild(bar);
    if (job.error) {
      const err = document.createElement('span');
      err.className = 'job-error';
      err.textContent = job.error;
      row.appendChild(err);
    }
    return row;
  }
}

export class MetricsPanel {
  constructor(private root: HTMLElement, private api: ApiClient) {}

  async show(setId: string, truthId: string): Promise<MetricsReport> {
    const report = await this.api.evaluate(setId, truthId);
    this.root.replaceChildren();
    const title = document.createElement('h3');
    title.textContent = 'Metrics';
    this.root.appendChild(title);
    const rows: [string, number | null][] = [
      ['completion rate', report.completion_rate],
      ['user accuracy', report.user_accuracy],
      ['F1', report.f1],
    ];
    for (const [name, value] of rows) {
      const p = document.createElement('p');
      p.textContent = `${name}: ${value === null ? 'n/a' : (value * 100).toFixed(1) + '%'}`;
      this.root.appendChild(p);
    }
    const counts = document.createElement('p');
    counts.textContent = `matched ${report.counts.n_matched} of ${report.counts.n_gt} `
      + `ground truth, ${report.counts.n_det} detections`;
    this.root.appendChild(counts);
    return report;
  }
}
