import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface Call {
  method: string;
  url: string;
  body?: string;
}

function fakeFetch(status = 200, payload: unknown = {}) {
  const calls: Call[] = [];
  const impl = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({
      method: init?.method ?? "GET",
      url,
      body: typeof init?.body === "string" ? init.body : undefined,
    });
    return {
      ok: status < 400,
      status,
      json: async () => payload,
    } as Response;
  };
  return { calls, impl };
}

const DOCUMENTED_PREFIXES = ["/api/", "/reproducibility/experiments", "/storage/"];

describe("ApiClient", () => {
  it("sends the bearer token on every call", async () => {
    let seenAuth = "";
    const client = new ApiClient("http://x", "sekret", async (url, init) => {
      seenAuth = (init?.headers as Record<string, string>).Authorization;
      return { ok: true, status: 200, json: async () => ({ items: [] }) } as Response;
    });
    await client.listExecutions("task");
    expect(seenAuth).toBe("Bearer sekret");
  });

  it("raises ApiError carrying the error envelope", async () => {
    const { impl } = fakeFetch(429, {
      status_code: 429,
      code: "quota_exceeded",
      message: "no",
      details: ["cpu_cores"],
    });
    const client = new ApiClient("http://x", "t", impl);
    const error = await client.submitTask({} as never).catch((e) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect(error.code).toBe("quota_exceeded");
    expect(error.envelope.details).toEqual(["cpu_cores"]);
  });

  it("touches only documented endpoints", async () => {
    const { calls, impl } = fakeFetch(200, { items: [], owner: "a", name: "e", task_refs: [] });
    const client = new ApiClient("http://x", "t", impl);
    await client.listExecutions("task");
    await client.listExecutions("workflow");
    await client.getExecution("task", "u1");
    await client.submitTask({} as never);
    await client.submitWorkflow({} as never);
    await client.cancelExecution("workflow", "u2");
    await client.logs("task", "u1", "stdout");
    await client.quotas();
    await client.listExperiments();
    await client.createExperiment("e");
    await client.getExperiment("a", "e");
    await client.assignTasks("a", "e", ["u1"]);
    await client.deleteExperiment("a", "e");
    for (const call of calls) {
      const path = call.url.replace("http://x", "");
      expect(
        DOCUMENTED_PREFIXES.some((prefix) => path.startsWith(prefix)),
        `undocumented path ${path}`,
      ).toBe(true);
    }
  });

  it("a poll cycle issues GET requests only", async () => {
    const { calls, impl } = fakeFetch(200, { items: [] });
    const client = new ApiClient("http://x", "t", impl);
    await client.listExecutions("task");
    await client.listExecutions("workflow");
    expect(calls.every((call) => call.method === "GET")).toBe(true);
  });
});
