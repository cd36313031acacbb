/**
 * Dashboard state container. Owns polling, the live event stream and all
 * lifecycle gating; the render layer only reads state and dispatches
 * actions. Nothing in here touches the DOM, so the whole thing runs under
 * plain node in tests.
 */

import {
  ApiClient,
  ApiError,
  ConfigEntry,
  EventRecord,
  InstallRequest,
  ProbeDescriptor,
} from "./api.js";
import { isActionEnabled, Lifecycle, ProbeAction } from "./lifecycle.js";
import { readNdjson } from "./ndjson.js";
import { RingBuffer } from "./ringbuffer.js";

export const CONSOLE_CAPACITY = 1000;
export const POLL_INTERVAL_MS = 2000;

export interface ActionOutcome {
  probeId: string;
  action: ProbeAction;
  ok: boolean;
  status: number; // HTTP status (0 for network errors)
  message: string;
}

type Listener = () => void;

export class DashboardStore {
  probes: ProbeDescriptor[] = [];
  configs: ConfigEntry[] = [];
  prefix = "";
  paused = false;
  lastError: string | null = null;
  streamConnected = false;
  readonly actionLog: ActionOutcome[] = [];

  private console = new RingBuffer<EventRecord>(CONSOLE_CAPACITY);
  private pending: EventRecord[] = [];
  private listeners = new Set<Listener>();
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private streamAbort: AbortController | null = null;
  private streamGeneration = 0;

  constructor(private api: ApiClient) {}

  // -- subscriptions ---------------------------------------------------------

  subscribe(listener: Listener): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l();
  }

  // -- registry polling ---------------------------------------------------------

  async refresh(): Promise<void> {
    try {
      const [probes, configs] = await Promise.all([
        this.api.listProbes(),
        this.api.listConfigs(),
      ]);
      this.probes = probes;
      this.configs = configs;
      // lastError is left alone: inline action errors must survive polls.
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
    this.notify();
  }

  startPolling(intervalMs: number = POLL_INTERVAL_MS): void {
    this.stopPolling();
    this.pollTimer = setInterval(() => void this.refresh(), intervalMs);
  }

  stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  // -- event console -------------------------------------------------------------

  consoleRows(): readonly EventRecord[] {
    return this.console.toArray();
  }

  pendingCount(): number {
    return this.pending.length;
  }

  /** Change the topic filter; reconnects the stream. */
  async setFilter(prefix: string): Promise<void> {
    this.prefix = prefix;
    this.console.clear();
    this.pending = [];
    await this.connectStream();
  }

  pause(): void {
    this.paused = true;
    this.notify();
  }

  resume(): void {
    this.paused = false;
    // Everything buffered while paused lands in order; the ring enforces
    // the capacity bound.
    for (const record of this.pending) this.console.push(record);
    this.pending = [];
    this.notify();
  }

  async connectStream(): Promise<void> {
    this.disconnectStream();
    const generation = ++this.streamGeneration;
    const abort = new AbortController();
    this.streamAbort = abort;
    try {
      const stream = await this.api.openStream(this.prefix, abort.signal);
      this.streamConnected = true;
      this.notify();
      void this.consume(stream, generation);
    } catch (err) {
      this.streamConnected = false;
      if (!abort.signal.aborted) {
        this.lastError = err instanceof Error ? err.message : String(err);
      }
      this.notify();
    }
  }

  disconnectStream(): void {
    if (this.streamAbort) {
      this.streamAbort.abort();
      this.streamAbort = null;
    }
    this.streamConnected = false;
  }

  private async consume(stream: ReadableStream<Uint8Array>, generation: number): Promise<void> {
    try {
      for await (const record of readNdjson<EventRecord>(stream)) {
        if (generation !== this.streamGeneration) return; // superseded
        if (this.paused) {
          this.pending.push(record);
          if (this.pending.length > CONSOLE_CAPACITY) this.pending.shift();
        } else {
          this.console.push(record);
        }
        this.notify();
      }
    } catch {
      // aborted or connection lost
    }
    if (generation === this.streamGeneration) {
      this.streamConnected = false;
      this.notify();
    }
  }

  // -- lifecycle actions ------------------------------------------------------------

  isEnabled(probe: ProbeDescriptor, action: ProbeAction): boolean {
    return isActionEnabled(probe.lifecycle as Lifecycle, action);
  }

  /**
   * Dispatch a lifecycle action. Disabled actions are refused locally and
   * never reach the controller; API failures land in the action log and in
   * lastError for inline display.
   */
  async probeAction(
    probeId: string,
    action: ProbeAction,
    install?: InstallRequest,
  ): Promise<boolean> {
    const probe = this.probes.find((p) => p.probe_id === probeId);
    if (!probe || !this.isEnabled(probe, action)) {
      return false;
    }
    try {
      if (action === "install") {
        if (!install) throw new Error("install needs a program and attach source");
        await this.api.installProbe(probeId, install);
      } else if (action === "start") {
        await this.api.startProbe(probeId);
      } else if (action === "stop") {
        await this.api.stopProbe(probeId);
      } else {
        await this.api.removeProbe(probeId);
      }
      this.actionLog.push({ probeId, action, ok: true, status: 200, message: "" });
      this.lastError = null;
    } catch (err) {
      const status = err instanceof ApiError ? err.status : 0;
      const message = err instanceof Error ? err.message : String(err);
      this.actionLog.push({ probeId, action, ok: false, status, message });
      this.lastError = message;
    }
    await this.refresh();
    return true;
  }

  async addProbe(probeId: string, hostLabel = ""): Promise<void> {
    try {
      await this.api.addProbe(probeId, hostLabel);
      this.lastError = null;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
    }
    await this.refresh();
  }

  async uploadConfig(text: string): Promise<boolean> {
    try {
      await this.api.uploadConfig(text);
      this.lastError = null;
      await this.refresh();
      return true;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      this.notify();
      return false;
    }
  }

  dispose(): void {
    this.stopPolling();
    this.disconnectStream();
  }
}
