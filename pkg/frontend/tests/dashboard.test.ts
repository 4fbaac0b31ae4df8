// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { TaskDashboard } from "../src/dashboard.js";
import { toRow } from "../src/model.js";
import type { ExecutionSummary } from "../src/types.js";

function summary(overrides: Partial<ExecutionSummary> = {}): ExecutionSummary {
  return {
    uuid: "11111111-2222-4333-8444-555555555555",
    kind: "task",
    name: "demo",
    status: "RUNNING",
    submitted_at: "2026-08-10T10:00:00+00:00",
    updated_at: "2026-08-10T10:00:01+00:00",
    ...overrides,
  };
}

describe("TaskDashboard", () => {
  let host: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "<div id='host'></div>";
    host = document.getElementById("host")!;
  });

  it("renders rows with status badges", () => {
    const dashboard = new TaskDashboard(host, {
      onCancel: async () => {},
      onReexecute: async () => {},
    });
    dashboard.update([toRow(summary())]);
    const badge = host.querySelector(".badge")!;
    expect(badge.textContent).toBe("RUNNING");
    expect(badge.className).toContain("badge-running");
  });

  it("badge flips on a poll update without rebuilding state", () => {
    const dashboard = new TaskDashboard(host, {
      onCancel: async () => {},
      onReexecute: async () => {},
    });
    dashboard.update([toRow(summary())]);
    dashboard.update([
      toRow(summary({ status: "COMPLETED", updated_at: "2026-08-10T10:00:05+00:00" })),
    ]);
    expect(host.querySelector(".badge")!.textContent).toBe("COMPLETED");
  });

  it("cancel asks for confirmation and then calls the handler", () => {
    const onCancel = vi.fn(async () => {});
    let confirmed = false;
    const dashboard = new TaskDashboard(host, {
      onCancel,
      onReexecute: async () => {},
      confirmImpl: () => {
        confirmed = true;
        return true;
      },
    });
    dashboard.update([toRow(summary())]);
    (host.querySelector("button[data-action='cancel']") as HTMLButtonElement).click();
    expect(confirmed).toBe(true);
    expect(onCancel).toHaveBeenCalledOnce();
  });

  it("declining the confirmation makes no call", () => {
    const onCancel = vi.fn(async () => {});
    const dashboard = new TaskDashboard(host, {
      onCancel,
      onReexecute: async () => {},
      confirmImpl: () => false,
    });
    dashboard.update([toRow(summary())]);
    (host.querySelector("button[data-action='cancel']") as HTMLButtonElement).click();
    expect(onCancel).not.toHaveBeenCalled();
  });

  it("cancel is disabled on terminal rows, re-execute on live ones", () => {
    const dashboard = new TaskDashboard(host, {
      onCancel: async () => {},
      onReexecute: async () => {},
    });
    dashboard.update([
      toRow(summary({ uuid: "a-live", status: "RUNNING" })),
      toRow(summary({ uuid: "b-done", status: "COMPLETED" })),
    ]);
    const rows = [...host.querySelectorAll("tbody tr")];
    const byUuid = Object.fromEntries(rows.map((r) => [(r as HTMLElement).dataset.uuid, r]));
    const live = byUuid["a-live"]!;
    const done = byUuid["b-done"]!;
    expect(
      (live.querySelector("button[data-action='cancel']") as HTMLButtonElement).disabled,
    ).toBe(false);
    expect(
      (live.querySelector("button[data-action='reexecute']") as HTMLButtonElement).disabled,
    ).toBe(true);
    expect(
      (done.querySelector("button[data-action='cancel']") as HTMLButtonElement).disabled,
    ).toBe(true);
    expect(
      (done.querySelector("button[data-action='reexecute']") as HTMLButtonElement).disabled,
    ).toBe(false);
  });

  it("stale banner appears without clearing rows", () => {
    const dashboard = new TaskDashboard(host, {
      onCancel: async () => {},
      onReexecute: async () => {},
    });
    dashboard.update([toRow(summary())]);
    dashboard.setStale(true);
    expect(host.querySelector(".banner-stale")!.classList.contains("hidden")).toBe(false);
    expect(host.querySelectorAll("tbody tr").length).toBe(1);
    dashboard.setStale(false);
    expect(host.querySelector(".banner-stale")!.classList.contains("hidden")).toBe(true);
  });
});
