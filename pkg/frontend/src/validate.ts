// Client-side mirror of the server's task validation: same checks, same
// field naming, so inline errors match what the gateway would say.

import type { TaskDocument } from "./types.js";

function isNormalizedAbsPath(path: string): boolean {
  if (!path.startsWith("/")) {
    return false;
  }
  if (path !== "/" && path.endsWith("/")) {
    return false;
  }
  const segments = path.split("/").slice(1);
  return segments.every((segment) => segment !== "" && segment !== "." && segment !== "..");
}

function segments(path: string): string[] {
  return path.split("/").filter((s) => s !== "");
}

function pathIsUnder(path: string, root: string): boolean {
  const ps = segments(path);
  const rs = segments(root);
  return ps.length >= rs.length && rs.every((seg, i) => ps[i] === seg);
}

export function validateTask(doc: TaskDocument): string[] {
  const violations: string[] = [];
  if (!doc.executors || doc.executors.length === 0) {
    violations.push("executors empty");
  }
  (doc.executors ?? []).forEach((executor, i) => {
    if (!executor.command || executor.command.length === 0) {
      violations.push(`executors[${i}].command empty`);
    }
    if (!executor.image) {
      violations.push(`executors[${i}].image empty`);
    }
    for (const key of Object.keys(executor.env ?? {})) {
      if (key === "") {
        violations.push(`executors[${i}].env has an empty variable name`);
      }
    }
    if (executor.workdir !== undefined && !isNormalizedAbsPath(executor.workdir)) {
      violations.push(`executors[${i}].workdir not an absolute normalized path`);
    }
  });
  (["inputs", "outputs"] as const).forEach((kind) => {
    (doc[kind] ?? []).forEach((mount, i) => {
      if (!mount.url) {
        violations.push(`${kind}[${i}].url empty`);
      }
      if (!mount.path.startsWith("/")) {
        violations.push(`${kind}[${i}].path not absolute`);
      } else if (!isNormalizedAbsPath(mount.path)) {
        violations.push(`${kind}[${i}].path not normalized`);
      }
    });
  });
  const volumes = doc.volumes ?? [];
  volumes.forEach((volume, i) => {
    if (!isNormalizedAbsPath(volume.path)) {
      violations.push(`volumes[${i}].path not an absolute normalized path`);
    }
  });
  for (let i = 0; i < volumes.length; i += 1) {
    for (let j = i + 1; j < volumes.length; j += 1) {
      if (
        pathIsUnder(volumes[i].path, volumes[j].path) ||
        pathIsUnder(volumes[j].path, volumes[i].path)
      ) {
        violations.push(`volumes[${i}] and volumes[${j}] are nested`);
      }
    }
  }
  const resources = doc.resources ?? { cpu_cores: 0, ram_gb: 0, disk_gb: 0 };
  if (!(resources.cpu_cores > 0)) {
    violations.push("resources.cpu_cores must be positive");
  }
  if (!(resources.ram_gb > 0)) {
    violations.push("resources.ram_gb must be positive");
  }
  if (!(resources.disk_gb > 0)) {
    violations.push("resources.disk_gb must be positive");
  }
  const mountPaths = new Set([...(doc.inputs ?? []), ...(doc.outputs ?? [])].map((m) => m.path));
  (doc.executors ?? []).forEach((executor, i) => {
    if (executor.workdir !== undefined && isNormalizedAbsPath(executor.workdir)) {
      const inside =
        mountPaths.has(executor.workdir) ||
        volumes.some((volume) => pathIsUnder(executor.workdir!, volume.path));
      if (!inside) {
        violations.push(`executors[${i}].workdir outside declared volumes and mounts`);
      }
    }
  });
  return violations;
}
