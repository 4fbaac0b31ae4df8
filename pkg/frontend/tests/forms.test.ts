// @vitest-environment happy-dom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { SubmitForm } from "../src/forms.js";

function makeForm(status = 201, payload: unknown = { uuid: "u1", kind: "task" }) {
  const calls: { url: string; method: string }[] = [];
  const client = new ApiClient("http://x", "t", async (url, init) => {
    calls.push({ url, method: init?.method ?? "GET" });
    return { ok: status < 400, status, json: async () => payload } as Response;
  });
  const onSubmitted = vi.fn();
  document.body.innerHTML = "<div id='host'></div>";
  const form = new SubmitForm(document.getElementById("host")!, client, { onSubmitted });
  return { form, calls, onSubmitted };
}

function setField(name: string, value: string): void {
  const field = document.querySelector<HTMLInputElement | HTMLTextAreaElement>(
    `[name='${name}']`,
  )!;
  field.value = value;
}

async function submitStructured(): Promise<void> {
  const formElement = document.querySelector<HTMLFormElement>("form.structured")!;
  formElement.dispatchEvent(new Event("submit", { cancelable: true }));
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("SubmitForm", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("blocks invalid documents client-side: no request is sent", async () => {
    const { calls } = makeForm();
    setField("command", "");
    await submitStructured();
    expect(calls).toEqual([]);
    const text = document.querySelector(".errors")!.textContent;
    expect(text).toContain("executors[0].command empty");
  });

  it("posts a valid task and toasts the uuid", async () => {
    const { calls, onSubmitted } = makeForm();
    setField("command", "echo hi");
    await submitStructured();
    expect(calls).toEqual([{ url: "http://x/api/tasks", method: "POST" }]);
    expect(onSubmitted).toHaveBeenCalledOnce();
    expect(document.querySelector(".toast")!.textContent).toContain("u1");
  });

  it("renders the quota banner with the violated dimensions", async () => {
    const { calls } = makeForm(429, {
      status_code: 429,
      code: "quota_exceeded",
      message: "rejected",
      details: ["cpu_cores", "ram_gb"],
    });
    setField("command", "echo hi");
    await submitStructured();
    expect(calls.length).toBe(1);
    const banner = document.querySelector(".banner-quota")!;
    expect(banner.classList.contains("hidden")).toBe(false);
    expect(banner.textContent).toContain("cpu_cores, ram_gb");
  });

  it("renders server envelope details inline", async () => {
    const { } = makeForm(400, {
      status_code: 400,
      code: "validation_failed",
      message: "bad",
      details: ["inputs[0].path not normalized"],
    });
    setField("command", "echo hi");
    await submitStructured();
    expect(document.querySelector(".errors")!.textContent).toContain(
      "inputs[0].path not normalized",
    );
  });

  it("raw JSON mode validates tasks before posting", async () => {
    const { calls } = makeForm();
    const area = document.querySelector<HTMLTextAreaElement>(".raw-json")!;
    area.value = JSON.stringify({
      executors: [{ image: "alpine", command: [], env: {} }],
      inputs: [],
      outputs: [],
      volumes: [],
      resources: { cpu_cores: 1, ram_gb: 1, disk_gb: 1 },
    });
    (document.querySelector(".raw-submit") as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(calls).toEqual([]);
    expect(document.querySelector(".raw-errors")!.textContent).toContain("command empty");
  });

  it("raw JSON mode posts workflows to the workflow endpoint", async () => {
    const { calls } = makeForm(201, { uuid: "w1", kind: "workflow" });
    const select = document.querySelector<HTMLSelectElement>(".raw-kind")!;
    select.value = "workflow";
    const area = document.querySelector<HTMLTextAreaElement>(".raw-json")!;
    area.value = JSON.stringify({ executors: [] });
    (document.querySelector(".raw-submit") as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(calls).toEqual([{ url: "http://x/api/workflows", method: "POST" }]);
  });
});
