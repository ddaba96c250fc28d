/** Flat experiment table for one study; entry point into drill-down. */

import { Api } from "../api.js";
import { el, mount } from "../dom.js";

export function renderExperiments(root: Element, api: Api, studyId: string): void {
  void api.experiments(studyId).then(({ experiments }) => {
    mount(
      root,
      el("h2", {}, `Experiments — study ${studyId}`),
      el("table", { class: "studies" },
        el("tr", {},
          el("th", {}, "experiment"),
          el("th", {}, "assignment"),
          el("th", {}, "rep"),
          el("th", {}, "status"),
          el("th", {}, "attempt"),
          el("th", {}, "detail"),
        ),
        ...experiments.map((e) =>
          el("tr", {},
            el("td", {}, el("a", { href: `#/experiment/${e.id}` }, e.id.slice(-14))),
            el("td", {},
              Object.entries(e.assignment)
                .map(([k, v]) => `${k}=${v}`)
                .join(", "),
            ),
            el("td", {}, String(e.repetition_index)),
            el("td", { class: e.status }, e.status),
            el("td", {}, String(e.attempt)),
            el("td", {}, e.exit_detail ?? ""),
          ),
        ),
      ),
    );
  });
}
