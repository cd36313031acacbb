import { describe, expect, it } from "vitest";

import { enabledActions, isActionEnabled, Lifecycle } from "../src/lifecycle.js";

describe("lifecycle gating", () => {
  it("offers exactly {install} for a registered probe", () => {
    expect(enabledActions("registered")).toEqual(["install"]);
  });

  it("offers exactly {stop} for a running probe", () => {
    expect(enabledActions("running")).toEqual(["stop"]);
  });

  it("offers {start, remove} for a stopped probe", () => {
    expect(enabledActions("stopped")).toEqual(["start", "remove"]);
  });

  it("offers {start, remove} for an installed probe", () => {
    expect(enabledActions("installed")).toEqual(["start", "remove"]);
  });

  it("offers exactly {remove} for a failed probe", () => {
    expect(enabledActions("failed")).toEqual(["remove"]);
  });

  it("never enables an action outside the controller edge set", () => {
    // Controller-legal pairs; the UI set must be a subset.
    const controllerLegal = new Set([
      "registered:install",
      "installed:start",
      "stopped:start",
      "running:stop",
      "installed:remove",
      "running:remove",
      "stopped:remove",
      "failed:remove",
    ]);
    const states: Lifecycle[] = ["registered", "installed", "running", "stopped", "failed"];
    for (const state of states) {
      for (const action of enabledActions(state)) {
        expect(controllerLegal.has(`${state}:${action}`), `${state}:${action}`).toBe(true);
      }
      for (const action of ["install", "start", "stop", "remove"] as const) {
        if (!controllerLegal.has(`${state}:${action}`)) {
          expect(isActionEnabled(state, action)).toBe(false);
        }
      }
    }
  });
});
