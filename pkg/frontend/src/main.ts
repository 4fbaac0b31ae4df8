// Wiring: key prompt, tabs, the 3-second poll loop, and user actions.

import { ApiClient, ApiError } from "./api.js";
import { TaskDashboard } from "./dashboard.js";
import { ExperimentBuilder } from "./experiments.js";
import { SubmitForm } from "./forms.js";
import { toRow, type TaskRow } from "./model.js";
import { Poller } from "./poll.js";
import type { ExecutionKind } from "./types.js";

const POLL_INTERVAL_MS = 3000;

function el<T extends HTMLElement>(selector: string): T {
  const node = document.querySelector<T>(selector);
  if (!node) {
    throw new Error(`missing element ${selector}`);
  }
  return node;
}

export function startApp(): void {
  const keyOverlay = el<HTMLElement>("#key-overlay");
  const keyInput = el<HTMLInputElement>("#key-input");
  const keyError = el<HTMLElement>("#key-error");
  el<HTMLButtonElement>("#key-connect").addEventListener("click", () => void connect());
  keyInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      void connect();
    }
  });

  let session: { api: ApiClient; poller: Poller } | null = null;

  async function connect(): Promise<void> {
    const token = keyInput.value.trim();
    if (!token) {
      keyError.textContent = "Enter your API key.";
      return;
    }
    // The key lives in this closure only: nothing is persisted anywhere.
    const api = new ApiClient(window.location.origin, token);
    try {
      await api.checkKey();
    } catch (error) {
      keyError.textContent =
        error instanceof ApiError && error.status === 401
          ? "That key was rejected. Check it and try again."
          : `Cannot reach the service: ${error}`;
      return;
    }
    keyInput.value = "";
    keyError.textContent = "";
    keyOverlay.classList.add("hidden");
    session?.poller.stop();
    session = buildSession(api, () => {
      session?.poller.stop();
      keyOverlay.classList.remove("hidden");
      keyError.textContent = "Your key stopped working. Enter a valid key.";
    });
  }

  function buildSession(api: ApiClient, onAuthLost: () => void): { api: ApiClient; poller: Poller } {
    const dashboard = new TaskDashboard(el("#tasks-view"), {
      onCancel: async (row) => {
        await api.cancelExecution(row.kind as ExecutionKind, row.uuid);
        await poller.kick();
      },
      onReexecute: async (row) => {
        const record = await api.getExecution(row.kind as ExecutionKind, row.uuid);
        if (row.kind === "task") {
          await api.submitTask(record.definition);
        } else {
          await api.submitWorkflow(record.definition as never);
        }
        await poller.kick();
      },
      onShowLogs: (row) => void showLogs(row),
    });
    const builder = new ExperimentBuilder(el("#experiments-view"), api);
    new SubmitForm(el("#submit-view"), api, {
      onSubmitted: () => void poller.kick(),
    });

    async function showLogs(row: TaskRow): Promise<void> {
      const stdout = await api.logs(row.kind as ExecutionKind, row.uuid, "stdout");
      const stderr = await api.logs(row.kind as ExecutionKind, row.uuid, "stderr");
      const pre = el<HTMLPreElement>("#logs-pre");
      pre.textContent = stdout
        .map((text, index) => `--- executor ${index} stdout ---\n${text}`)
        .concat(stderr.map((text, index) => `--- executor ${index} stderr ---\n${text}`))
        .join("\n");
      el("#logs-overlay").classList.remove("hidden");
    }

    const poller = new Poller(
      async () => {
        try {
          const [tasks, workflows] = await Promise.all([
            api.listExecutions("task"),
            api.listExecutions("workflow"),
          ]);
          const rows = [...tasks.items, ...workflows.items].map(toRow);
          dashboard.update(rows);
          builder.update(dashboard.rows);
          dashboard.setStale(false);
        } catch (error) {
          if (error instanceof ApiError && error.status === 401) {
            onAuthLost();
            return;
          }
          dashboard.setStale(true); // keep showing the last good rows
          throw error; // let the poller back off
        }
      },
      { intervalMs: POLL_INTERVAL_MS },
    );
    poller.start();
    void builder.refreshExperiments();
    return { api, poller };
  }

  // tab switching
  for (const button of document.querySelectorAll<HTMLButtonElement>("nav button[data-tab]")) {
    button.addEventListener("click", () => {
      for (const other of document.querySelectorAll("nav button[data-tab]")) {
        other.classList.toggle("active", other === button);
      }
      for (const view of document.querySelectorAll<HTMLElement>(".view")) {
        view.classList.toggle("hidden", view.id !== `${button.dataset.tab}-view`);
      }
    });
  }
  el("#logs-close").addEventListener("click", () =>
    el("#logs-overlay").classList.add("hidden"),
  );
}

if (typeof document !== "undefined" && document.getElementById("key-overlay")) {
  startApp();
}
