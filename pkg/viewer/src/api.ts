// Typed client for the langfield service HTTP API.

export interface ViewInfo {
  id: string;
  index: number;
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  camera_to_world: number[];
}

export interface ViewsResponse {
  views: ViewInfo[];
  checkpoint_step: number;
}

export interface HealthResponse {
  status: string;
  checkpoint_step: number;
}

export interface QueryRequest {
  view: string;
  text: string;
  canonicals: string[];
  temperature: number;
  scale?: number;
}

export interface QueryResponse {
  max_score: number;
  selected_scale: number;
  scale_source: "auto" | "manual";
  query: string;
  view: string;
  width: number;
  height: number;
  raster_url: string;
  overlay_url: string;
}

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

async function errorMessage(res: Response): Promise<string> {
  const body = await res.json().catch(() => ({}));
  return (body as { error?: string }).error || `HTTP ${res.status}`;
}

export class ApiClient {
  base: string;
  private fetchFn: FetchFn;

  constructor(base = "", fetchFn?: FetchFn) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn || ((url, init) => fetch(url, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) throw new ApiError(res.status, await errorMessage(res));
    return res.json() as Promise<T>;
  }

  health(): Promise<HealthResponse> {
    return this.getJson<HealthResponse>("/health");
  }

  views(): Promise<ViewsResponse> {
    return this.getJson<ViewsResponse>("/views");
  }

  // checkpointStep in the URL keeps the browser from reusing a render
  // cached under an older checkpoint.
  renderUrl(viewId: string, checkpointStep: number): string {
    return `${this.base}/render?view=${encodeURIComponent(viewId)}` +
      `&v=${checkpointStep}`;
  }

  async query(req: QueryRequest, signal?: AbortSignal): Promise<QueryResponse> {
    const res = await this.fetchFn(this.base + "/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
    if (!res.ok) throw new ApiError(res.status, await errorMessage(res));
    return res.json() as Promise<QueryResponse>;
  }

  // Raw relevancy raster: little-endian f32, row 0 at the image bottom.
  async fetchRaster(url: string, signal?: AbortSignal): Promise<Float32Array> {
    const res = await this.fetchFn(this.base + url, { signal });
    if (!res.ok) throw new ApiError(res.status, await errorMessage(res));
    const buf = await res.arrayBuffer();
    const view = new DataView(buf);
    const out = new Float32Array(Math.floor(view.byteLength / 4));
    for (let i = 0; i < out.length; i++) {
      out[i] = view.getFloat32(i * 4, true);
    }
    return out;
  }
}
