import { describe, expect, it } from "vitest";

import { validateTask } from "../src/validate.js";
import type { TaskDocument } from "../src/types.js";

function doc(overrides: Partial<TaskDocument> = {}): TaskDocument {
  return {
    name: "t",
    executors: [{ image: "alpine", command: ["echo", "hi"], env: {} }],
    inputs: [],
    outputs: [],
    volumes: [],
    resources: { cpu_cores: 1, ram_gb: 0.5, disk_gb: 1 },
    ...overrides,
  };
}

describe("validateTask mirrors the server", () => {
  it("accepts a minimal well-formed task", () => {
    expect(validateTask(doc())).toEqual([]);
  });

  it("flags an empty command with the server's field naming", () => {
    const violations = validateTask(
      doc({ executors: [{ image: "alpine", command: [], env: {} }] }),
    );
    expect(violations).toContain("executors[0].command empty");
  });

  it("flags unnormalized mount paths", () => {
    const violations = validateTask(
      doc({
        inputs: [{ url: "a/x", path: "/data/../etc" }],
        volumes: [{ path: "/data" }],
      }),
    );
    expect(violations).toContain("inputs[0].path not normalized");
  });

  it("flags nested volumes", () => {
    const violations = validateTask(doc({ volumes: [{ path: "/v" }, { path: "/v/sub" }] }));
    expect(violations.some((v) => v.includes("nested"))).toBe(true);
  });

  it("allows sibling volumes sharing a string prefix", () => {
    expect(validateTask(doc({ volumes: [{ path: "/v" }, { path: "/v2" }] }))).toEqual([]);
  });

  it("flags non-positive resources", () => {
    const violations = validateTask(
      doc({ resources: { cpu_cores: 0, ram_gb: 1, disk_gb: 1 } }),
    );
    expect(violations).toContain("resources.cpu_cores must be positive");
  });

  it("requires workdir inside the workspace", () => {
    const violations = validateTask(
      doc({
        executors: [{ image: "a", command: ["true"], env: {}, workdir: "/elsewhere" }],
        volumes: [{ path: "/v" }],
      }),
    );
    expect(violations).toContain("executors[0].workdir outside declared volumes and mounts");
  });
});
