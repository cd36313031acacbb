/**
 * Typed client over the controller's public HTTP API. Nothing here is
 * dashboard-specific; every call maps 1:1 onto a documented endpoint.
 */

export interface ProbeStatus {
  state: string;
  packets_processed: number;
  events_published: number;
  packets_skipped: number;
  started_at: number | null;
}

export interface ProbeDescriptor {
  probe_id: string;
  host_label: string;
  attach: { mode: string; source: string } | null;
  artifact: { program_id: string; version: number } | null;
  lifecycle: string;
  pid: number | null;
  last_status: ProbeStatus | null;
}

export interface ConfigVersion {
  program_id: string;
  version: number;
  checksum: string;
  uploaded_at: number;
}

export interface ConfigEntry {
  program_id: string;
  versions: ConfigVersion[];
}

export interface EventRecord {
  offset: number;
  topic: string;
  ts_micros: number;
  seq: number;
  payload: string;
  received_at: number;
}

export interface InstallRequest {
  program_id: string;
  version?: number;
  attach: { mode: "direct" | "mirrored"; source: string };
}

export interface ValidationIssue {
  path: string;
  message: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly issues: ValidationIssue[] = [],
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`;
  let issues: ValidationIssue[] = [];
  try {
    const body = await resp.json();
    if (typeof body.error === "string") message = body.error;
    if (Array.isArray(body.errors)) {
      issues = body.errors;
      message = issues.map((i) => `${i.path}: ${i.message}`).join("; ") || message;
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(resp.status, message, issues);
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown, raw?: string): Promise<T> {
    const init: RequestInit = { method };
    if (raw !== undefined) {
      init.body = raw;
      init.headers = { "Content-Type": "application/xml" };
    } else if (body !== undefined) {
      init.body = JSON.stringify(body);
      init.headers = { "Content-Type": "application/json" };
    }
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string; bus_address: string }> {
    return this.request("GET", "/api/health");
  }

  async listProbes(): Promise<ProbeDescriptor[]> {
    const body = await this.request<{ probes: ProbeDescriptor[] }>("GET", "/api/probes");
    return body.probes;
  }

  addProbe(probeId: string, hostLabel = ""): Promise<ProbeDescriptor> {
    return this.request("POST", "/api/probes", { probe_id: probeId, host_label: hostLabel });
  }

  installProbe(probeId: string, req: InstallRequest): Promise<ProbeDescriptor> {
    return this.request("POST", `/api/probes/${probeId}/install`, req);
  }

  startProbe(probeId: string): Promise<ProbeDescriptor> {
    return this.request("POST", `/api/probes/${probeId}/start`);
  }

  stopProbe(probeId: string): Promise<ProbeDescriptor> {
    return this.request("POST", `/api/probes/${probeId}/stop`);
  }

  removeProbe(probeId: string): Promise<{ removed: string }> {
    return this.request("DELETE", `/api/probes/${probeId}`);
  }

  async listConfigs(): Promise<ConfigEntry[]> {
    const body = await this.request<{ configs: ConfigEntry[] }>("GET", "/api/configs");
    return body.configs;
  }

  uploadConfig(dslText: string): Promise<ConfigVersion & { warnings: ValidationIssue[] }> {
    return this.request("POST", "/api/configs", undefined, dslText);
  }

  async queryEvents(prefix = "", since = 0, limit = 1000): Promise<EventRecord[]> {
    const params = new URLSearchParams({ prefix, since: String(since), limit: String(limit) });
    const body = await this.request<{ events: EventRecord[] }>("GET", `/api/events?${params}`);
    return body.events;
  }

  /** Open the live stream; the caller consumes it as an async iterator. */
  async openStream(prefix: string, signal: AbortSignal): Promise<ReadableStream<Uint8Array>> {
    const params = new URLSearchParams({ prefix });
    const resp = await fetch(`${this.baseUrl}/api/events/stream?${params}`, { signal });
    if (!resp.ok || !resp.body) throw await parseError(resp);
    return resp.body;
  }
}
