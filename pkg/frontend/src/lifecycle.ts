/**
 * Probe lifecycle knowledge. Buttons are rendered from this table, so the
 * UI can never issue a request the controller would reject as an illegal
 * transition.
 *
 * The table is a strict subset of the controller's edge set: the API also
 * accepts remove-while-running (it stops first), but the panel asks for an
 * explicit stop before remove, so a running probe offers exactly {stop}.
 */

export type Lifecycle =
  | "registered"
  | "installed"
  | "running"
  | "stopped"
  | "failed";

export type ProbeAction = "install" | "start" | "stop" | "remove";

const EDGES: Record<ProbeAction, readonly Lifecycle[]> = {
  install: ["registered"],
  start: ["installed", "stopped"],
  stop: ["running"],
  remove: ["installed", "stopped", "failed"],
};

export const ALL_ACTIONS: readonly ProbeAction[] = [
  "install",
  "start",
  "stop",
  "remove",
];

export function isActionEnabled(state: Lifecycle, action: ProbeAction): boolean {
  return EDGES[action].includes(state);
}

export function enabledActions(state: Lifecycle): ProbeAction[] {
  return ALL_ACTIONS.filter((a) => isActionEnabled(state, a));
}
