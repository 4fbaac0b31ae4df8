// Wire types, mirroring the gateway's JSON bodies.

export type ExecutionStatus =
  | "SUBMITTED"
  | "APPROVED"
  | "SCHEDULED"
  | "RUNNING"
  | "COMPLETED"
  | "ERROR"
  | "CANCELED"
  | "REJECTED";

export type ExecutionKind = "task" | "workflow";

export interface ExecutionSummary {
  uuid: string;
  kind: ExecutionKind;
  name: string | null;
  status: ExecutionStatus;
  submitted_at: string;
  updated_at: string;
}

export interface Page<T> {
  items: T[];
  page: number;
  page_size: number;
  total: number;
  pages: number;
}

export interface ExecutionRecord extends ExecutionSummary {
  definition: TaskDocument | WorkflowDocument;
  plan: string[][] | null;
  status_history: { status: ExecutionStatus; timestamp: string }[];
  stdout: string[];
  stderr: string[];
  reason: string | null;
  denied_dimensions: string[];
  warnings: string[];
  already_terminal?: boolean;
}

export interface ExecutorDocument {
  image: string;
  command: string[];
  env: Record<string, string>;
  workdir?: string;
}

export interface MountDocument {
  url: string;
  path: string;
  direction?: "input" | "output";
}

export interface TaskDocument {
  name?: string | null;
  executors: ExecutorDocument[];
  inputs: MountDocument[];
  outputs: MountDocument[];
  volumes: { path: string }[];
  resources: { cpu_cores: number; ram_gb: number; disk_gb: number };
}

export interface WorkflowDocument extends TaskDocument {
  executors: (ExecutorDocument & { id: string; reads: string[]; writes: string[] })[];
}

export interface ExperimentDocument {
  owner: string;
  name: string;
  context_ref: string;
  description: string | null;
  participants: string[];
  task_refs: string[];
  created_at: string | null;
  aggregates?: ExperimentAggregates;
}

export interface ExperimentAggregates {
  execution_count: number;
  status_counts: Record<string, number>;
  cpu_core_seconds: number;
  ram_gb_seconds: number;
  earliest_submission: string | null;
  latest_completion: string | null;
}

export interface ErrorEnvelope {
  status_code: number;
  code: string;
  message: string;
  details?: unknown[];
}
