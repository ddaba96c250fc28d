/** Polling controller for the live progress board. Keeps the last good
 * snapshot through API outages (stale flag) and stops once the study is
 * terminal. Timer-free so tests can drive tick() directly. */

import type { Api, ProgressDoc, WorkerDoc } from "./api.js";

export interface MonitorSnapshot {
  progress: ProgressDoc | null;
  workers: WorkerDoc[];
  stale: boolean;
  terminal: boolean;
}

const TERMINAL_STATUSES = new Set(["finished", "canceled"]);

export class MonitorController {
  snapshot: MonitorSnapshot = {
    progress: null,
    workers: [],
    stale: false,
    terminal: false,
  };
  onUpdate: (snapshot: MonitorSnapshot) => void = () => {};
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private api: Pick<Api, "progress" | "listWorkers">,
    private studyId: string,
    private intervalMs = 2000,
  ) {}

  async tick(): Promise<MonitorSnapshot> {
    try {
      const progress = await this.api.progress(this.studyId);
      let workers: WorkerDoc[] = this.snapshot.workers;
      try {
        workers = (await this.api.listWorkers()).workers;
      } catch {
        /* worker listing is cosmetic; keep the last list */
      }
      this.snapshot = {
        progress,
        workers,
        stale: false,
        terminal: TERMINAL_STATUSES.has(progress.status),
      };
    } catch {
      // keep the previous snapshot, flag it stale
      this.snapshot = { ...this.snapshot, stale: true };
    }
    if (this.snapshot.terminal) this.stop();
    this.onUpdate(this.snapshot);
    return this.snapshot;
  }

  start(): void {
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }
}
