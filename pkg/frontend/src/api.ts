// Typed client over the review service. The transport is injectable so tests
// can run against an in-memory server with the same journal semantics.

import type {
  AuditResponse,
  FlagDto,
  FlagRequest,
  FlagsResponse,
  HistogramArtifact,
  JobDto,
  MapResponse,
  NodeResponse,
} from "./types.js";

export interface FetchLike {
  (url: string, init?: { method?: string; headers?: Record<string, string>; body?: string }):
    Promise<{ status: number; ok: boolean; json(): Promise<unknown> }>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: unknown,
  ) {
    super(`HTTP ${status}: ${JSON.stringify(body)}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: Parameters<FetchLike>[1] = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const payload = await resp.json().catch(() => null);
    if (!resp.ok) {
      throw new ApiError(resp.status, payload);
    }
    return payload as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  getMap(): Promise<MapResponse> {
    return this.request("GET", "/som/map");
  }

  getNodeWaveforms(row: number, col: number, limit = 80): Promise<NodeResponse> {
    return this.request("GET", `/som/node/${row}/${col}/waveforms?limit=${limit}`);
  }

  getFlags(): Promise<FlagsResponse> {
    return this.request("GET", "/flags");
  }

  postFlag(flag: FlagRequest): Promise<FlagDto> {
    return this.request("POST", "/flags", flag);
  }

  deleteFlag(traceId: string): Promise<{ removed: boolean }> {
    return this.request("DELETE", `/flags/${encodeURIComponent(traceId)}`);
  }

  postCycle(body: Record<string, unknown> = {}): Promise<JobDto> {
    return this.request("POST", "/cycle", body);
  }

  getJob(id: string): Promise<JobDto> {
    return this.request("GET", `/jobs/${id}`);
  }

  getAudit(bin: "left" | "right", k: number, seed = 0): Promise<AuditResponse> {
    return this.request("GET", `/audit/extremal?bin=${bin}&k=${k}&seed=${seed}`);
  }

  getHistogram(selector = "all"): Promise<HistogramArtifact> {
    return this.request("GET", `/ensemble/histograms?selector=${encodeURIComponent(selector)}`);
  }
}
