/** Dashboard bootstrap: wires the store to the static page. */

import { ApiClient } from "./api.js";
import {
  InstallSelection,
  renderConfigOptions,
  renderConfigs,
  renderConsole,
  renderErrorBar,
  renderProbes,
} from "./render.js";
import { DashboardStore, POLL_INTERVAL_MS } from "./store.js";

const api = new ApiClient(window.location.origin);
const store = new DashboardStore(api);

const probesBox = document.getElementById("probes") as HTMLElement;
const configsBox = document.getElementById("configs") as HTMLElement;
const consoleBox = document.getElementById("console") as HTMLElement;
const errorBar = document.getElementById("error-bar") as HTMLElement;
const configSelect = document.getElementById("install-config") as HTMLSelectElement;
const attachModeSelect = document.getElementById("install-mode") as HTMLSelectElement;
const attachSourceInput = document.getElementById("install-source") as HTMLInputElement;
const filterInput = document.getElementById("filter") as HTMLInputElement;
const pauseButton = document.getElementById("pause") as HTMLButtonElement;
const addForm = document.getElementById("add-probe-form") as HTMLFormElement;
const uploadInput = document.getElementById("config-file") as HTMLInputElement;

function installSelection(): InstallSelection | null {
  const picked = configSelect.value;
  const source = attachSourceInput.value.trim();
  if (!picked || !source) return null;
  const [programId, version] = picked.split("@");
  return {
    programId,
    version: Number(version),
    attachMode: attachModeSelect.value === "mirrored" ? "mirrored" : "direct",
    attachSource: source,
  };
}

store.subscribe(() => {
  renderProbes(probesBox, store, installSelection);
  renderConfigs(configsBox, store);
  renderConfigOptions(configSelect, store);
  renderConsole(consoleBox, store.consoleRows());
  renderErrorBar(errorBar, store);
  pauseButton.textContent = store.paused
    ? `resume (${store.pendingCount()} buffered)`
    : "pause";
});

filterInput.addEventListener("change", () => {
  void store.setFilter(filterInput.value.trim());
});

pauseButton.addEventListener("click", () => {
  if (store.paused) store.resume();
  else store.pause();
});

addForm.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const data = new FormData(addForm);
  const probeId = String(data.get("probe_id") ?? "").trim();
  const hostLabel = String(data.get("host_label") ?? "").trim();
  if (probeId) {
    void store.addProbe(probeId, hostLabel);
    addForm.reset();
  }
});

uploadInput.addEventListener("change", () => {
  const file = uploadInput.files?.[0];
  if (!file) return;
  void file.text().then((text) => store.uploadConfig(text));
  uploadInput.value = "";
});

void store.refresh();
void store.connectStream();
store.startPolling(POLL_INTERVAL_MS);
