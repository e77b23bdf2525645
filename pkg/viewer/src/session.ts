// Query session state: one current view, one query, an append-only history.
// All server traffic goes through the injected ApiClient so tests can mock
// fetch and inspect the payloads.

import { ApiClient, QueryRequest, QueryResponse, ViewInfo } from "./api.js";

export const DEFAULT_CANONICALS = ["object", "things", "stuff", "texture"];
export const DEFAULT_TEMPERATURE = 10;

export interface HistoryEntry {
  query: string;
  max_score: number;
  selected_scale: number;
  scale_source: string;
  view: string;
}

export interface OverlayState {
  scores: Float32Array;
  width: number;
  height: number;
  rasterUrl: string;
}

export class ViewerSession {
  api: ApiClient;
  views: ViewInfo[] = [];
  checkpointStep = -1;
  viewId = "";
  queryText = "";
  canonicals: string[] = [...DEFAULT_CANONICALS];
  temperature = DEFAULT_TEMPERATURE;
  manualScale: number | null = null; // null: let the server sweep scales
  opacity = 1.0;
  history: HistoryEntry[] = [];
  lastResponse: QueryResponse | null = null;
  overlay: OverlayState | null = null;
  error: string | null = null;
  busy = false;

  private pending: AbortController | null = null;
  private listeners: Array<() => void> = [];

  constructor(api: ApiClient) {
    this.api = api;
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  async init(): Promise<void> {
    const doc = await this.api.views();
    this.views = doc.views;
    this.checkpointStep = doc.checkpoint_step;
    if (!this.viewId && doc.views.length > 0) this.viewId = doc.views[0].id;
    this.emit();
  }

  renderUrl(): string {
    return this.api.renderUrl(this.viewId, this.checkpointStep);
  }

  canSubmit(): boolean {
    return this.queryText.trim() !== "" && this.canonicals.length > 0 &&
      this.viewId !== "" && this.views.length > 0;
  }

  buildRequest(): QueryRequest {
    const req: QueryRequest = {
      view: this.viewId,
      text: this.queryText.trim(),
      canonicals: [...this.canonicals],
      temperature: this.temperature,
    };
    if (this.manualScale !== null) req.scale = this.manualScale;
    return req;
  }

  // Submit the current query. Only one request is in flight at a time; a
  // resubmit aborts the pending one. On a 4xx/5xx only the error banner
  // changes. Resolves true when the overlay and history were updated.
  async submit(): Promise<boolean> {
    if (!this.canSubmit()) return false;
    if (this.pending) this.pending.abort();
    const ctl = new AbortController();
    this.pending = ctl;
    this.busy = true;
    this.error = null;
    this.emit();
    try {
      const resp = await this.api.query(this.buildRequest(), ctl.signal);
      const scores = await this.api.fetchRaster(resp.raster_url, ctl.signal);
      if (ctl.signal.aborted) return false;
      this.lastResponse = resp;
      this.overlay = {
        scores,
        width: resp.width,
        height: resp.height,
        rasterUrl: resp.raster_url,
      };
      this.history.push({
        query: resp.query,
        max_score: resp.max_score,
        selected_scale: resp.selected_scale,
        scale_source: resp.scale_source,
        view: resp.view,
      });
      return true;
    } catch (err) {
      if (ctl.signal.aborted) return false; // superseded, not a failure
      this.error = err instanceof Error ? err.message : String(err);
      return false;
    } finally {
      if (this.pending === ctl) {
        this.pending = null;
        this.busy = false;
      }
      this.emit();
    }
  }

  // Move to another dataset view, keeping the query text, and re-run the
  // current query there. An id not in the view table only raises the banner.
  async switchView(id: string): Promise<void> {
    if (!this.views.some((v) => v.id === id)) {
      this.error = `unknown view '${id}'`;
      this.emit();
      return;
    }
    this.viewId = id;
    this.error = null;
    this.emit();
    if (this.queryText.trim() !== "") await this.submit();
  }

  // Replace the canonical phrase list; an empty list is rejected here so it
  // never reaches the server.
  editCanonicals(phrases: string[]): boolean {
    const cleaned = phrases.map((p) => p.trim()).filter((p) => p !== "");
    if (cleaned.length === 0) {
      this.error = "canonical phrases cannot be empty";
      this.emit();
      return false;
    }
    this.canonicals = cleaned;
    this.error = null;
    this.emit();
    return true;
  }

  resetCanonicals(): void {
    this.canonicals = [...DEFAULT_CANONICALS];
    this.error = null;
    this.emit();
  }

  setQueryText(text: string): void {
    this.queryText = text;
    this.emit();
  }

  setOpacity(value: number): void {
    this.opacity = Math.min(1, Math.max(0, value));
    this.emit();
  }

  setTemperature(value: number): void {
    if (Number.isFinite(value) && value > 0) {
      this.temperature = value;
      this.emit();
    }
  }

  setManualScale(value: number | null): void {
    if (value === null) {
      this.manualScale = null;
    } else if (Number.isFinite(value) && value > 0) {
      this.manualScale = value;
    } else {
      return;
    }
    this.emit();
  }

  // Re-read /views; a new checkpoint invalidates every cached result, so the
  // overlay is dropped and the query re-runs against the fresh weights.
  async refresh(): Promise<void> {
    const doc = await this.api.views();
    const changed = doc.checkpoint_step !== this.checkpointStep;
    this.views = doc.views;
    this.checkpointStep = doc.checkpoint_step;
    if (!changed) {
      this.emit();
      return;
    }
    this.overlay = null;
    this.lastResponse = null;
    this.emit();
    if (this.queryText.trim() !== "") await this.submit();
  }
}
