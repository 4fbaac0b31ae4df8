// Experiment builder: check off finished executions, name the experiment,
// create it, and inspect aggregates. Selection survives poll refreshes and
// server-side rejections (e.g. duplicate names).

import { ApiError, type ApiClient } from "./api.js";
import { eligibleForExperiment, type TaskRow } from "./model.js";
import type { ExperimentDocument } from "./types.js";

export class ExperimentBuilder {
  selection = new Set<string>();
  private rows: TaskRow[] = [];
  private listHost!: HTMLElement;
  private detailHost!: HTMLElement;
  private errorHost!: HTMLElement;
  private experimentsHost!: HTMLElement;

  constructor(
    private container: HTMLElement,
    private api: ApiClient,
  ) {
    this.render();
  }

  private render(): void {
    this.container.innerHTML = `
      <section class="card">
        <h3>Create an experiment</h3>
        <label>Name <input class="exp-name" placeholder="experiment-1"></label>
        <label>Description <input class="exp-description"></label>
        <div class="exp-error errors"></div>
        <div class="candidates"></div>
        <button class="exp-create" type="button">Create</button>
      </section>
      <section class="card">
        <h3>My experiments</h3>
        <div class="experiments"></div>
        <div class="experiment-detail"></div>
      </section>`;
    this.listHost = this.container.querySelector(".candidates")!;
    this.detailHost = this.container.querySelector(".experiment-detail")!;
    this.errorHost = this.container.querySelector(".exp-error")!;
    this.experimentsHost = this.container.querySelector(".experiments")!;
    this.container
      .querySelector(".exp-create")!
      .addEventListener("click", () => void this.create());
  }

  /** Refresh the candidate list; checked boxes stay checked. */
  update(rows: TaskRow[]): void {
    this.rows = rows;
    for (const uuid of [...this.selection]) {
      const row = rows.find((r) => r.uuid === uuid);
      if (row && !eligibleForExperiment(row.status)) {
        this.selection.delete(uuid); // an execution cannot leave a terminal state, but stay strict
      }
    }
    this.renderCandidates();
  }

  private renderCandidates(): void {
    const list = document.createElement("ul");
    list.className = "candidate-list";
    for (const row of this.rows) {
      const item = document.createElement("li");
      const checkbox = document.createElement("input");
      checkbox.type = "checkbox";
      checkbox.dataset.uuid = row.uuid;
      const eligible = eligibleForExperiment(row.status);
      checkbox.disabled = !eligible;
      checkbox.checked = this.selection.has(row.uuid);
      checkbox.addEventListener("change", () => {
        if (checkbox.checked) {
          this.selection.add(row.uuid);
        } else {
          this.selection.delete(row.uuid);
        }
      });
      const label = document.createElement("label");
      label.append(
        checkbox,
        ` ${row.uuid.slice(0, 8)} · ${row.kind} · ${row.name ?? "—"} · ${row.status}`,
      );
      item.append(label);
      list.append(item);
    }
    this.listHost.replaceChildren(list);
  }

  private async create(): Promise<void> {
    const nameInput = this.container.querySelector<HTMLInputElement>(".exp-name")!;
    const descriptionInput = this.container.querySelector<HTMLInputElement>(".exp-description")!;
    this.errorHost.textContent = "";
    const name = nameInput.value.trim();
    if (!name) {
      this.errorHost.textContent = "Experiment name is required.";
      return;
    }
    try {
      const created = await this.api.createExperiment(
        name,
        descriptionInput.value.trim() || undefined,
      );
      const assigned = await this.api.assignTasks(created.owner, created.name, [
        ...this.selection,
      ]);
      this.selection.clear();
      nameInput.value = "";
      await this.refreshExperiments();
      await this.showDetail(assigned.owner, assigned.name);
      this.renderCandidates();
    } catch (error) {
      // selection is intentionally preserved so the user can retry
      if (error instanceof ApiError && error.status === 409) {
        this.errorHost.textContent = `An experiment named '${name}' already exists.`;
      } else {
        this.errorHost.textContent = String(
          error instanceof ApiError ? error.message : error,
        );
      }
    }
  }

  async refreshExperiments(): Promise<void> {
    const experiments = await this.api.listExperiments();
    const list = document.createElement("ul");
    list.className = "experiment-list";
    for (const experiment of experiments) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = "#";
      link.textContent = `${experiment.owner}/${experiment.name} (${experiment.task_refs.length})`;
      link.addEventListener("click", (event) => {
        event.preventDefault();
        void this.showDetail(experiment.owner, experiment.name);
      });
      item.append(link);
      list.append(item);
    }
    this.experimentsHost.replaceChildren(list);
  }

  async showDetail(owner: string, name: string): Promise<void> {
    const detail = await this.api.getExperiment(owner, name);
    this.detailHost.replaceChildren(renderDetail(detail));
  }
}

function renderDetail(experiment: ExperimentDocument): HTMLElement {
  const host = document.createElement("div");
  host.className = "detail";
  const title = document.createElement("h4");
  title.textContent = `${experiment.owner}/${experiment.name}`;
  host.append(title);
  if (experiment.description) {
    const description = document.createElement("p");
    description.textContent = experiment.description;
    host.append(description);
  }
  const members = document.createElement("p");
  members.textContent = `Participants: ${experiment.participants.join(", ")}`;
  host.append(members);
  const tasks = document.createElement("ul");
  tasks.className = "detail-tasks";
  for (const uuid of experiment.task_refs) {
    const item = document.createElement("li");
    item.textContent = uuid;
    tasks.append(item);
  }
  host.append(tasks);
  const aggregates = experiment.aggregates;
  if (aggregates) {
    const stats = document.createElement("dl");
    stats.className = "aggregates";
    const pairs: [string, string][] = [
      ["Executions", String(aggregates.execution_count)],
      [
        "By status",
        Object.entries(aggregates.status_counts)
          .map(([status, count]) => `${status}: ${count}`)
          .join(", ") || "—",
      ],
      ["CPU core-seconds", aggregates.cpu_core_seconds.toFixed(1)],
      ["RAM GB-seconds", aggregates.ram_gb_seconds.toFixed(1)],
      ["Earliest submission", aggregates.earliest_submission ?? "—"],
      ["Latest completion", aggregates.latest_completion ?? "—"],
    ];
    for (const [term, value] of pairs) {
      const dt = document.createElement("dt");
      dt.textContent = term;
      const dd = document.createElement("dd");
      dd.textContent = value;
      stats.append(dt, dd);
    }
    host.append(stats);
  }
  return host;
}
