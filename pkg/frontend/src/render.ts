/**
 * DOM rendering over the store. Lifecycle buttons are created only for
 * actions the edge set allows in the probe's current state.
 */

import { EventRecord, ProbeDescriptor } from "./api.js";
import { enabledActions, Lifecycle, ProbeAction } from "./lifecycle.js";
import { DashboardStore } from "./store.js";

export interface InstallSelection {
  programId: string;
  version: number;
  attachMode: "direct" | "mirrored";
  attachSource: string;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function severityOf(topic: string): string {
  const parts = topic.split("/");
  return parts.length >= 3 ? parts[2] : "log";
}

export function renderProbes(
  container: HTMLElement,
  store: DashboardStore,
  getInstallSelection: () => InstallSelection | null,
): void {
  container.replaceChildren();
  if (store.probes.length === 0) {
    container.appendChild(el("p", "empty", "No probes registered."));
    return;
  }
  for (const probe of store.probes) {
    container.appendChild(renderProbeRow(probe, store, getInstallSelection));
  }
}

function renderProbeRow(
  probe: ProbeDescriptor,
  store: DashboardStore,
  getInstallSelection: () => InstallSelection | null,
): HTMLElement {
  const row = el("div", "probe-row");
  const title = el("div", "probe-title");
  title.appendChild(el("span", "probe-id", probe.probe_id));
  title.appendChild(el("span", `badge badge-${probe.lifecycle}`, probe.lifecycle));
  if (probe.artifact) {
    title.appendChild(
      el("span", "probe-program", `${probe.artifact.program_id} v${probe.artifact.version}`),
    );
  }
  row.appendChild(title);

  const status = probe.last_status;
  row.appendChild(
    el(
      "div",
      "probe-counters",
      status
        ? `packets ${status.packets_processed} | events ${status.events_published} | skipped ${status.packets_skipped}`
        : "no status yet",
    ),
  );

  const actions = el("div", "probe-actions");
  for (const action of enabledActions(probe.lifecycle as Lifecycle)) {
    const button = el("button", `action action-${action}`, action) as HTMLButtonElement;
    button.addEventListener("click", () => {
      void dispatch(store, probe, action, getInstallSelection);
    });
    actions.appendChild(button);
  }
  row.appendChild(actions);
  return row;
}

async function dispatch(
  store: DashboardStore,
  probe: ProbeDescriptor,
  action: ProbeAction,
  getInstallSelection: () => InstallSelection | null,
): Promise<void> {
  if (action === "install") {
    const selection = getInstallSelection();
    if (!selection) {
      store.lastError = "pick a config version and attach source first";
      await store.refresh();
      return;
    }
    await store.probeAction(probe.probe_id, "install", {
      program_id: selection.programId,
      version: selection.version,
      attach: { mode: selection.attachMode, source: selection.attachSource },
    });
  } else {
    await store.probeAction(probe.probe_id, action);
  }
}

export function renderConfigs(container: HTMLElement, store: DashboardStore): void {
  container.replaceChildren();
  if (store.configs.length === 0) {
    container.appendChild(el("p", "empty", "No configs uploaded."));
    return;
  }
  for (const entry of store.configs) {
    const row = el("div", "config-row");
    row.appendChild(el("span", "config-id", entry.program_id));
    row.appendChild(
      el(
        "span",
        "config-versions",
        entry.versions.map((v) => `v${v.version} (${v.checksum})`).join(", "),
      ),
    );
    container.appendChild(row);
  }
}

export function renderConfigOptions(select: HTMLSelectElement, store: DashboardStore): void {
  const previous = select.value;
  select.replaceChildren();
  for (const entry of store.configs) {
    for (const version of entry.versions) {
      const option = document.createElement("option");
      option.value = `${entry.program_id}@${version.version}`;
      option.textContent = `${entry.program_id} v${version.version}`;
      select.appendChild(option);
    }
  }
  if (previous) select.value = previous;
}

export function renderConsole(container: HTMLElement, rows: readonly EventRecord[]): void {
  container.replaceChildren();
  for (const record of rows) {
    const line = el("div", `event-row sev-${severityOf(record.topic)}`);
    line.appendChild(el("span", "event-offset", String(record.offset)));
    line.appendChild(el("span", "event-topic", record.topic));
    line.appendChild(el("span", "event-payload", record.payload));
    container.appendChild(line);
  }
  container.scrollTop = container.scrollHeight; // newest stays in view
}

export function renderErrorBar(container: HTMLElement, store: DashboardStore): void {
  container.textContent = store.lastError ?? "";
  container.style.display = store.lastError ? "block" : "none";
}
