// Live task table: status badges plus per-row cancel / re-execute actions.

import { mergeRows, type TaskRow } from "./model.js";

export interface DashboardHandlers {
  onCancel: (row: TaskRow) => Promise<void>;
  onReexecute: (row: TaskRow) => Promise<void>;
  onShowLogs?: (row: TaskRow) => void;
  confirmImpl?: (message: string) => boolean;
}

export class TaskDashboard {
  rows: TaskRow[] = [];
  private staleBanner: HTMLElement;
  private tableHost: HTMLElement;

  constructor(
    private container: HTMLElement,
    private handlers: DashboardHandlers,
  ) {
    this.container.innerHTML = "";
    this.staleBanner = document.createElement("div");
    this.staleBanner.className = "banner banner-stale hidden";
    this.staleBanner.textContent =
      "Connection trouble: showing the last data received. Retrying…";
    this.tableHost = document.createElement("div");
    this.container.append(this.staleBanner, this.tableHost);
    this.render();
  }

  /** Fold in a poll response; stale rows are discarded by updated_at. */
  update(incoming: TaskRow[]): void {
    this.rows = mergeRows(this.rows, incoming);
    this.render();
  }

  /** Transient fetch trouble: flag it, never clear existing rows. */
  setStale(stale: boolean): void {
    this.staleBanner.classList.toggle("hidden", !stale);
  }

  private render(): void {
    const table = document.createElement("table");
    table.className = "task-table";
    table.innerHTML =
      "<thead><tr><th>uuid</th><th>kind</th><th>name</th><th>status</th>" +
      "<th>submitted</th><th>updated</th><th>actions</th></tr></thead>";
    const tbody = document.createElement("tbody");
    for (const row of this.rows) {
      tbody.append(this.renderRow(row));
    }
    table.append(tbody);
    this.tableHost.replaceChildren(table);
  }

  private renderRow(row: TaskRow): HTMLTableRowElement {
    const tr = document.createElement("tr");
    tr.dataset.uuid = row.uuid;

    const uuidCell = document.createElement("td");
    uuidCell.className = "uuid";
    uuidCell.textContent = row.uuid.slice(0, 8);
    uuidCell.title = row.uuid;

    const kindCell = document.createElement("td");
    kindCell.textContent = row.kind;

    const nameCell = document.createElement("td");
    nameCell.textContent = row.name ?? "—";

    const statusCell = document.createElement("td");
    const badge = document.createElement("span");
    badge.className = `badge badge-${row.status.toLowerCase()}`;
    badge.textContent = row.status;
    statusCell.append(badge);

    const submittedCell = document.createElement("td");
    submittedCell.textContent = formatTimestamp(row.submitted_at);
    const updatedCell = document.createElement("td");
    updatedCell.textContent = formatTimestamp(row.updated_at);

    const actions = document.createElement("td");
    actions.className = "actions";
    const cancelButton = document.createElement("button");
    cancelButton.textContent = "Cancel";
    cancelButton.disabled = !row.canCancel;
    cancelButton.dataset.action = "cancel";
    cancelButton.addEventListener("click", () => {
      const confirmImpl = this.handlers.confirmImpl ?? ((m: string) => window.confirm(m));
      if (confirmImpl(`Cancel ${row.kind} ${row.uuid.slice(0, 8)}?`)) {
        void this.handlers.onCancel(row);
      }
    });
    const reexecuteButton = document.createElement("button");
    reexecuteButton.textContent = "Re-execute";
    reexecuteButton.disabled = !row.canReexecute;
    reexecuteButton.dataset.action = "reexecute";
    reexecuteButton.addEventListener("click", () => void this.handlers.onReexecute(row));
    actions.append(cancelButton, reexecuteButton);
    if (this.handlers.onShowLogs) {
      const logsButton = document.createElement("button");
      logsButton.textContent = "Logs";
      logsButton.dataset.action = "logs";
      logsButton.addEventListener("click", () => this.handlers.onShowLogs?.(row));
      actions.append(logsButton);
    }

    tr.append(uuidCell, kindCell, nameCell, statusCell, submittedCell, updatedCell, actions);
    return tr;
  }
}

function formatTimestamp(iso: string): string {
  return iso.replace("T", " ").replace(/\.\d+.*$/, "");
}
