// Thin client over the documented HTTP surface; nothing else is ever called.

import type {
  ErrorEnvelope,
  ExecutionKind,
  ExecutionRecord,
  ExecutionSummary,
  ExperimentDocument,
  Page,
  TaskDocument,
  WorkflowDocument,
} from "./types.js";

export class ApiError extends Error {
  constructor(public envelope: ErrorEnvelope) {
    super(envelope.message);
  }

  get code(): string {
    return this.envelope.code;
  }

  get status(): number {
    return this.envelope.status_code;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: { Authorization: `Bearer ${this.token}` },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(payload as ErrorEnvelope);
    }
    return payload as T;
  }

  listExecutions(kind: ExecutionKind, page = 1, pageSize = 50): Promise<Page<ExecutionSummary>> {
    const group = kind === "task" ? "tasks" : "workflows";
    return this.request("GET", `/api/${group}?page=${page}&page_size=${pageSize}`);
  }

  getExecution(kind: ExecutionKind, uuid: string): Promise<ExecutionRecord> {
    const group = kind === "task" ? "tasks" : "workflows";
    return this.request("GET", `/api/${group}/${uuid}`);
  }

  submitTask(document: TaskDocument): Promise<ExecutionRecord> {
    return this.request("POST", "/api/tasks", document);
  }

  submitWorkflow(document: WorkflowDocument): Promise<ExecutionRecord> {
    return this.request("POST", "/api/workflows", document);
  }

  cancelExecution(kind: ExecutionKind, uuid: string): Promise<ExecutionRecord> {
    const group = kind === "task" ? "tasks" : "workflows";
    return this.request("POST", `/api/${group}/${uuid}/cancel`);
  }

  logs(kind: ExecutionKind, uuid: string, channel: "stdout" | "stderr"): Promise<string[]> {
    const group = kind === "task" ? "tasks" : "workflows";
    return this.request("GET", `/api/${group}/${uuid}/${channel}`);
  }

  quotas(): Promise<Record<string, Record<string, number | null>>> {
    return this.request("GET", "/api/quotas");
  }

  listExperiments(): Promise<ExperimentDocument[]> {
    return this.request("GET", "/reproducibility/experiments");
  }

  createExperiment(name: string, description?: string): Promise<ExperimentDocument> {
    const body: Record<string, unknown> = { name };
    if (description) {
      body.description = description;
    }
    return this.request("POST", "/reproducibility/experiments", body);
  }

  getExperiment(owner: string, name: string): Promise<ExperimentDocument> {
    return this.request("GET", `/reproducibility/experiments/${owner}/${name}`);
  }

  assignTasks(owner: string, name: string, uuids: string[]): Promise<ExperimentDocument> {
    return this.request("PUT", `/reproducibility/experiments/${owner}/${name}/tasks`, {
      task_uuids: uuids,
    });
  }

  deleteExperiment(owner: string, name: string): Promise<{ deleted: string }> {
    return this.request("DELETE", `/reproducibility/experiments/${owner}/${name}`);
  }

  /** Cheapest authenticated GET; throws ApiError(401) on a bad key. */
  async checkKey(): Promise<void> {
    await this.quotas();
  }
}
