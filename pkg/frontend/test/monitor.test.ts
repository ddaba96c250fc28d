import { describe, expect, it } from "vitest";

import type { ProgressDoc, WorkerDoc } from "../src/api.js";
import { MonitorController } from "../src/monitor.js";

function progressDoc(status: string, finished = 0): ProgressDoc {
  return {
    study_id: "s1",
    status,
    counts: { pending: 6 - finished, leased: 0, running: 0, finished, failed: 0, canceled: 0 },
    total: 6,
    throughput_per_min: finished,
    eta_s: finished ? 30 : null,
  };
}

class FakeApi {
  sequence: (ProgressDoc | Error)[] = [];
  workers: WorkerDoc[] = [];

  async progress(): Promise<ProgressDoc> {
    const next = this.sequence.shift();
    if (next === undefined) throw new Error("sequence exhausted");
    if (next instanceof Error) throw next;
    return next;
  }

  async listWorkers(): Promise<{ workers: WorkerDoc[] }> {
    return { workers: this.workers };
  }
}

describe("monitor polling controller", () => {
  it("updates snapshots and stops on terminal status", async () => {
    const api = new FakeApi();
    api.sequence = [progressDoc("running", 2), progressDoc("finished", 6)];
    const monitor = new MonitorController(api, "s1", 10);

    const first = await monitor.tick();
    expect(first.progress?.counts.finished).toBe(2);
    expect(first.terminal).toBe(false);
    expect(first.stale).toBe(false);

    const second = await monitor.tick();
    expect(second.terminal).toBe(true);
    expect(monitor.running).toBe(false);
  });

  it("keeps the last snapshot and flags stale during an outage", async () => {
    const api = new FakeApi();
    api.sequence = [progressDoc("running", 3), new Error("connection refused")];
    const monitor = new MonitorController(api, "s1", 10);

    await monitor.tick();
    const during = await monitor.tick();
    expect(during.stale).toBe(true);
    expect(during.progress?.counts.finished).toBe(3); // last good data retained
  });

  it("treats canceled as terminal", async () => {
    const api = new FakeApi();
    api.sequence = [progressDoc("canceled")];
    const monitor = new MonitorController(api, "s1", 10);
    const snap = await monitor.tick();
    expect(snap.terminal).toBe(true);
  });
});
