// Submission views: a structured task form plus a raw-JSON mode for both
// tasks and workflows. Validation runs client-side before any request.

import { ApiError, type ApiClient } from "./api.js";
import { validateTask } from "./validate.js";
import type { ExecutionRecord, TaskDocument, WorkflowDocument } from "./types.js";

export interface SubmitCallbacks {
  onSubmitted: (record: ExecutionRecord) => void;
}

export class SubmitForm {
  private errorsHost!: HTMLElement;
  private quotaBanner!: HTMLElement;
  private toast!: HTMLElement;
  private structured!: HTMLFormElement;
  private rawArea!: HTMLTextAreaElement;
  private rawKind!: HTMLSelectElement;

  constructor(
    private container: HTMLElement,
    private api: ApiClient,
    private callbacks: SubmitCallbacks,
  ) {
    this.render();
  }

  private render(): void {
    this.container.innerHTML = `
      <div class="banner banner-quota hidden"></div>
      <div class="toast hidden"></div>
      <section class="card">
        <h3>Submit a task</h3>
        <form class="structured">
          <label>Name <input name="name" placeholder="my-task"></label>
          <label>Image <input name="image" value="docker.io/library/alpine:3.19"></label>
          <label>Command <input name="command" placeholder="echo hello"></label>
          <label>Env (KEY=value per line) <textarea name="env" rows="2"></textarea></label>
          <label>Volumes (one absolute path per line) <textarea name="volumes" rows="2"></textarea></label>
          <label>Inputs (key:/workspace/path per line) <textarea name="inputs" rows="2"></textarea></label>
          <label>Outputs (key:/workspace/path per line) <textarea name="outputs" rows="2"></textarea></label>
          <label>CPU cores <input name="cpu" type="number" value="1" min="1"></label>
          <label>RAM GB <input name="ram" type="number" value="0.5" step="0.1"></label>
          <label>Disk GB <input name="disk" type="number" value="1" step="0.1"></label>
          <div class="errors"></div>
          <button type="submit">Submit task</button>
        </form>
      </section>
      <section class="card">
        <h3>Raw JSON</h3>
        <select class="raw-kind"><option value="task">task</option><option value="workflow">workflow</option></select>
        <textarea class="raw-json" rows="10" placeholder='{"executors": [...]}'></textarea>
        <div class="raw-errors errors"></div>
        <button class="raw-submit" type="button">Submit JSON</button>
      </section>`;
    this.quotaBanner = this.container.querySelector(".banner-quota")!;
    this.toast = this.container.querySelector(".toast")!;
    this.structured = this.container.querySelector("form.structured")!;
    this.errorsHost = this.structured.querySelector(".errors")!;
    this.rawArea = this.container.querySelector(".raw-json")!;
    this.rawKind = this.container.querySelector(".raw-kind")!;
    this.structured.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submitStructured();
    });
    this.container
      .querySelector(".raw-submit")!
      .addEventListener("click", () => void this.submitRaw());
  }

  buildDocument(): TaskDocument {
    const data = new FormData(this.structured);
    const text = (name: string) => String(data.get(name) ?? "").trim();
    const lines = (name: string) =>
      text(name)
        .split("\n")
        .map((line) => line.trim())
        .filter((line) => line !== "");
    const mounts = (name: string) =>
      lines(name).map((line) => {
        const colon = line.indexOf(":");
        return colon < 0
          ? { url: line, path: "" }
          : { url: line.slice(0, colon), path: line.slice(colon + 1) };
      });
    const env: Record<string, string> = {};
    for (const line of lines("env")) {
      const eq = line.indexOf("=");
      env[eq < 0 ? line : line.slice(0, eq)] = eq < 0 ? "" : line.slice(eq + 1);
    }
    return {
      name: text("name") || null,
      executors: [
        {
          image: text("image"),
          command: text("command").split(/\s+/).filter((part) => part !== ""),
          env,
        },
      ],
      inputs: mounts("inputs"),
      outputs: mounts("outputs"),
      volumes: lines("volumes").map((path) => ({ path })),
      resources: {
        cpu_cores: Number(text("cpu") || "1"),
        ram_gb: Number(text("ram") || "0.5"),
        disk_gb: Number(text("disk") || "1"),
      },
    };
  }

  showViolations(violations: string[], host: HTMLElement = this.errorsHost): void {
    host.replaceChildren(
      ...violations.map((violation) => {
        const item = document.createElement("div");
        item.className = "violation";
        item.textContent = violation;
        return item;
      }),
    );
  }

  private async submitStructured(): Promise<void> {
    this.quotaBanner.classList.add("hidden");
    const document_ = this.buildDocument();
    const violations = validateTask(document_);
    if (violations.length > 0) {
      this.showViolations(violations);
      return; // invalid: no request leaves the browser
    }
    this.showViolations([]);
    await this.post(() => this.api.submitTask(document_), this.errorsHost);
  }

  private async submitRaw(): Promise<void> {
    const host = this.container.querySelector<HTMLElement>(".raw-errors")!;
    this.quotaBanner.classList.add("hidden");
    let parsed: unknown;
    try {
      parsed = JSON.parse(this.rawArea.value);
    } catch (error) {
      this.showViolations([`not valid JSON: ${error}`], host);
      return;
    }
    if (this.rawKind.value === "task") {
      const violations = validateTask(parsed as TaskDocument);
      if (violations.length > 0) {
        this.showViolations(violations, host);
        return;
      }
    }
    this.showViolations([], host);
    await this.post(
      () =>
        this.rawKind.value === "task"
          ? this.api.submitTask(parsed as TaskDocument)
          : this.api.submitWorkflow(parsed as WorkflowDocument),
      host,
    );
  }

  private async post(
    send: () => Promise<ExecutionRecord>,
    errorHost: HTMLElement,
  ): Promise<void> {
    try {
      const record = await send();
      this.toast.textContent = `Submitted ${record.kind} ${record.uuid}`;
      this.toast.classList.remove("hidden");
      this.callbacks.onSubmitted(record);
    } catch (error) {
      if (error instanceof ApiError && error.code === "quota_exceeded") {
        const dimensions = (error.envelope.details ?? []).join(", ");
        this.quotaBanner.textContent = `Quota exceeded in: ${dimensions}`;
        this.quotaBanner.classList.remove("hidden");
      } else if (error instanceof ApiError) {
        const details = (error.envelope.details ?? []).map(String);
        this.showViolations(details.length > 0 ? details : [error.message], errorHost);
      } else {
        this.showViolations([String(error)], errorHost);
      }
    }
  }
}
