/** Single-experiment drill-down: assignment, seed, attempts, metric time
 * series (from wall offsets), and logs. */

import { Api } from "../api.js";
import { buildSeries, renderSeriesSvg } from "../charts.js";
import { el, mount } from "../dom.js";

export function renderDrilldown(root: Element, api: Api, experimentId: string): void {
  void api.drillDown(experimentId).then((bundle) => {
    const experiment = bundle.experiment;
    const byMetric = new Map<string, { wall_offset_ms: number; value: number }[]>();
    for (const record of bundle.metrics) {
      const list = byMetric.get(record.metric) ?? [];
      list.push(record);
      byMetric.set(record.metric, list);
    }
    const charts = el("div", { class: "series-grid" });
    for (const [metric, records] of byMetric) {
      const holder = el("div", { class: "series-cell" });
      holder.innerHTML = renderSeriesSvg(buildSeries(metric, records));
      charts.append(holder);
    }
    mount(
      root,
      el("h2", {}, `Experiment ${experimentId}`),
      el("div", {},
        `status ${experiment.status}, attempt ${bundle.attempts}, seed ${experiment.seed}` +
          (experiment.exit_detail ? `, detail: ${experiment.exit_detail}` : ""),
      ),
      el("h3", {}, "Assignment"),
      el("table", { class: "kv" },
        ...Object.entries(experiment.assignment).map(([k, v]) =>
          el("tr", {}, el("td", {}, k), el("td", {}, String(v))),
        ),
        el("tr", {}, el("td", {}, "repetition"), el("td", {}, String(experiment.repetition_index))),
      ),
      el("h3", {}, "Metric series"),
      byMetric.size ? charts : el("div", { class: "empty" }, "no records"),
      el("h3", {}, "Logs"),
      bundle.logs.length
        ? el("pre", { class: "logs" },
            bundle.logs
              .map((l) => `[${String(l.wall_offset_ms).padStart(7)}ms ${l.level}] ${l.message}`)
              .join("\n"),
          )
        : el("div", { class: "empty" }, "no log records"),
      el("h3", {}, "Provenance"),
      el("pre", {}, JSON.stringify(bundle.provenance, null, 2)),
    );
  });
}
