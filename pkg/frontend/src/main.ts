/** Hash-routed single-page app over the /api/v1 surface. */

import { Api } from "./api.js";
import { el, mount } from "./dom.js";
import { emptyEditor } from "./editor.js";
import { defaultViewState, deserializeViewState, serializeViewState } from "./state.js";
import { renderAnalysis } from "./views/analysis_view.js";
import { renderDrilldown } from "./views/drilldown_view.js";
import { renderEditor } from "./views/editor_view.js";
import { renderExperiments } from "./views/experiments_view.js";
import { renderMonitor } from "./views/monitor_view.js";
import { takePendingEditor } from "./views/shared_state.js";

const api = new Api("/api/v1");
let teardown: (() => void) | null = null;

function navigate(hash: string): void {
  location.hash = hash;
}

function studiesView(root: Element): void {
  void api.listStudies().then(({ studies }) => {
    mount(
      root,
      el("h2", {}, "Studies"),
      el("div", { class: "actions" },
        el("a", { href: "#/editor", class: "button primary" }, "New study"),
      ),
      studies.length
        ? el("table", { class: "studies" },
            el("tr", {},
              el("th", {}, "id"), el("th", {}, "status"),
              el("th", {}, "repetitions"), el("th", {}, "created"), el("th", {}, "")),
            ...studies.map((study) =>
              el("tr", {},
                el("td", {}, el("a", { href: `#/monitor/${study.id}` }, study.id.slice(0, 12))),
                el("td", { class: study.status }, study.status),
                el("td", {}, String(study.repetitions)),
                el("td", {}, study.created_at.slice(0, 19).replace("T", " ")),
                el("td", {},
                  el("a", { href: `#/analysis-for/${study.id}` }, "analyze"),
                ),
              ),
            ),
          )
        : el("div", { class: "empty" }, "no studies yet — create one"),
    );
  });
}

function route(): void {
  const root = document.getElementById("app");
  if (!root) return;
  if (teardown) {
    teardown();
    teardown = null;
  }
  const hash = location.hash || "#/";

  const analysisState = deserializeViewState(hash);
  if (analysisState) {
    renderAnalysis(root, api, analysisState, navigate);
    return;
  }
  if (hash.startsWith("#/analysis-for/")) {
    const studyId = hash.slice("#/analysis-for/".length);
    location.replace(serializeViewState(defaultViewState(studyId)));
    return;
  }
  if (hash.startsWith("#/monitor/")) {
    teardown = renderMonitor(root, api, hash.slice("#/monitor/".length), navigate);
    return;
  }
  if (hash.startsWith("#/experiment/")) {
    renderDrilldown(root, api, hash.slice("#/experiment/".length));
    return;
  }
  if (hash.startsWith("#/experiments/")) {
    renderExperiments(root, api, hash.slice("#/experiments/".length));
    return;
  }
  if (hash === "#/editor") {
    renderEditor(root, api, takePendingEditor() ?? emptyEditor(), navigate);
    return;
  }
  studiesView(root);
}

window.addEventListener("hashchange", route);
window.addEventListener("DOMContentLoaded", route);
