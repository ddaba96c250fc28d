/** Live progress board: status counts, throughput, ETA, per-worker activity,
 * links into drill-down for failures. Polls every 2 s until terminal. */

import { Api } from "../api.js";
import { MonitorController, MonitorSnapshot } from "../monitor.js";
import { el, mount } from "../dom.js";

const STATUS_ORDER = ["pending", "leased", "running", "finished", "failed", "canceled"];

export function renderMonitor(
  root: Element,
  api: Api,
  studyId: string,
  navigate: (hash: string) => void,
): () => void {
  const controller = new MonitorController(api, studyId);

  async function showFailed(): Promise<HTMLElement> {
    const box = el("div", { class: "failed-list" });
    try {
      const { experiments } = await api.experiments(studyId);
      const failed = experiments.filter((e) => e.status === "failed");
      mount(
        box,
        ...failed.map((e) =>
          el("div", {},
            el("a", { href: `#/experiment/${e.id}` },
              `${e.id} (attempt ${e.attempt}): ${e.exit_detail ?? "failed"}`),
          ),
        ),
      );
    } catch {
      /* listing failures is best-effort */
    }
    return box;
  }

  function draw(snapshot: MonitorSnapshot): void {
    const progress = snapshot.progress;
    const counts = progress?.counts ?? {};
    const total = progress?.total ?? 0;
    const bar = el(
      "div",
      { class: "progress-bar" },
      ...STATUS_ORDER.filter((s) => (counts[s] ?? 0) > 0).map((status) =>
        el("span", {
          class: `seg ${status}`,
          style: `flex-grow:${counts[status]}`,
          title: `${status}: ${counts[status]}`,
        }),
      ),
    );
    const workers = el(
      "table",
      { class: "workers" },
      el("tr", {}, el("th", {}, "worker"), el("th", {}, "state"), el("th", {}, "experiment")),
      ...snapshot.workers.map((w) =>
        el("tr", {},
          el("td", {}, w.id.slice(0, 10)),
          el("td", { class: w.state }, w.state),
          el("td", {}, w.current_experiment ?? "-"),
        ),
      ),
    );
    const pieces: (HTMLElement | null)[] = [
      el("h2", {}, `Study ${studyId}`),
      snapshot.stale
        ? el("div", { class: "banner stale" }, "API unreachable — showing last snapshot")
        : null,
      el("div", { class: "statusline" },
        `status: ${progress?.status ?? "?"} — ` +
          STATUS_ORDER.map((s) => `${s} ${counts[s] ?? 0}`).join(", ") +
          ` (total ${total})`,
      ),
      bar,
      el("div", {},
        `throughput ${progress ? progress.throughput_per_min.toFixed(2) : "-"} /min` +
          (progress?.eta_s != null ? `, eta ${Math.round(progress.eta_s)} s` : ""),
      ),
      el("h3", {}, "Workers"),
      workers,
      el("div", { class: "actions" },
        el("button", {
          onclick: () => void api.cancelStudy(studyId).then(() => controller.tick()),
        }, "Cancel study"),
        el("a", { href: `#/analysis-for/${studyId}`, class: "button" }, "Analyze"),
        el("a", { href: api.exportUrl(studyId, "csv"), class: "button" }, "CSV"),
        el("a", { href: api.exportUrl(studyId, "jsonl"), class: "button" }, "JSONL"),
      ),
    ];
    mount(root, ...pieces.filter((p): p is HTMLElement => p !== null));
    if ((counts["failed"] ?? 0) > 0) {
      root.append(el("h3", {}, "Failed experiments"));
      const holder = el("div", {});
      root.append(holder);
      void showFailed().then((box) => mount(holder, box));
    }
  }

  controller.onUpdate = draw;
  controller.start();
  return () => controller.stop();
}
