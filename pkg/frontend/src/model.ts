// View-model rules: everything a row can do derives solely from its status.

import type { ExecutionStatus, ExecutionSummary } from "./types.js";

export const ALL_STATUSES: ExecutionStatus[] = [
  "SUBMITTED",
  "APPROVED",
  "SCHEDULED",
  "RUNNING",
  "COMPLETED",
  "ERROR",
  "CANCELED",
  "REJECTED",
];

export const TERMINAL_STATUSES: ReadonlySet<ExecutionStatus> = new Set([
  "COMPLETED",
  "ERROR",
  "CANCELED",
  "REJECTED",
]);

export function isTerminal(status: ExecutionStatus): boolean {
  return TERMINAL_STATUSES.has(status);
}

/** Checkbox eligibility for the experiment builder: finished runs only. */
export function eligibleForExperiment(status: ExecutionStatus): boolean {
  return status === "COMPLETED" || status === "ERROR";
}

export interface TaskRow {
  uuid: string;
  kind: string;
  name: string | null;
  status: ExecutionStatus;
  submitted_at: string;
  updated_at: string;
  canCancel: boolean;
  canReexecute: boolean;
}

export function toRow(summary: ExecutionSummary): TaskRow {
  return {
    uuid: summary.uuid,
    kind: summary.kind,
    name: summary.name,
    status: summary.status,
    submitted_at: summary.submitted_at,
    updated_at: summary.updated_at,
    canCancel: !isTerminal(summary.status),
    canReexecute: isTerminal(summary.status),
  };
}

/**
 * Fold a poll response into the current rows. Overlapping responses may
 * arrive out of order; a row only moves forward in updated_at, so stale
 * data is discarded per row. Unseen uuids are added.
 */
export function mergeRows(current: TaskRow[], incoming: TaskRow[]): TaskRow[] {
  const byUuid = new Map(current.map((row) => [row.uuid, row]));
  for (const row of incoming) {
    const existing = byUuid.get(row.uuid);
    if (!existing || row.updated_at >= existing.updated_at) {
      byUuid.set(row.uuid, row);
    }
  }
  return [...byUuid.values()].sort((a, b) =>
    a.submitted_at < b.submitted_at ? 1 : a.submitted_at > b.submitted_at ? -1 : 0,
  );
}
