/** Study creation form: template drafting with per-parameter value lists,
 * kind toggles, and live instance-count / duration feedback. */

import { Api } from "../api.js";
import type { Scalar } from "../api.js";
import {
  EditorState,
  estimatedDurationS,
  instanceCount,
  parseValueText,
  toStudyDoc,
  toTemplateDoc,
  validateEditor,
} from "../editor.js";
import { el, mount } from "../dom.js";

export function renderEditor(
  root: Element,
  api: Api,
  state: EditorState,
  navigate: (hash: string) => void,
): void {
  let perExperimentS = 60;
  let workers = 1;

  const feedback = el("div", { class: "feedback" });
  const errorBox = el("div", { class: "errors" });

  function refreshFeedback(): void {
    const errors = validateEditor(state);
    const count = instanceCount(state);
    const duration = estimatedDurationS(count, perExperimentS, workers);
    mount(
      feedback,
      el("strong", {}, `${count} experiments`),
      ` — estimated ${Math.round(duration)} s (${(duration / 3600).toFixed(1)} h) ` +
        `at ${perExperimentS} s each on ${workers} worker(s)`,
    );
    mount(
      errorBox,
      ...Object.entries(errors).map(([field, message]) =>
        el("div", { class: "error-line" }, `${field}: ${message}`),
      ),
    );
  }

  function valuesEditor(index: number): HTMLElement {
    const parameter = state.parameters[index];
    const list = el("div", { class: "value-list" });
    function redraw(): void {
      mount(
        list,
        ...parameter.values.map((value, vi) => {
          const bound = state.boundValues[parameter.name] ?? [];
          const isBound = bound.some((b) => typeof b === typeof value && b === value);
          return el(
            "span",
            { class: "value-chip" + (isBound ? " bound" : "") },
            el("label", {},
              el("input", {
                type: "checkbox",
                ...(isBound ? { checked: true } : {}),
                onchange: () => {
                  const current = state.boundValues[parameter.name] ?? [];
                  state.boundValues[parameter.name] = isBound
                    ? current.filter((b) => !(typeof b === typeof value && b === value))
                    : [...current, value];
                  redraw();
                  refreshFeedback();
                },
              }),
              ` ${String(value)}`,
            ),
            el("button", {
              class: "chip-remove",
              title: "remove value",
              onclick: () => {
                parameter.values.splice(vi, 1);
                state.boundValues[parameter.name] = (
                  state.boundValues[parameter.name] ?? []
                ).filter((b) => !(typeof b === typeof value && b === value));
                redraw();
                refreshFeedback();
              },
            }, "×"),
          );
        }),
        el("input", {
          class: "value-add",
          placeholder: "add value, enter",
          onkeydown: (event: Event) => {
            const kb = event as KeyboardEvent;
            if (kb.key !== "Enter") return;
            const input = kb.target as HTMLInputElement;
            if (!input.value.trim()) return;
            const value: Scalar = parseValueText(input.value);
            parameter.values.push(value);
            state.boundValues[parameter.name] = [
              ...(state.boundValues[parameter.name] ?? []),
              value,
            ];
            input.value = "";
            redraw();
            refreshFeedback();
          },
        }),
      );
    }
    redraw();
    return list;
  }

  function parameterRow(index: number): HTMLElement {
    const parameter = state.parameters[index];
    return el(
      "fieldset",
      { class: "param-row" },
      el("input", {
        value: parameter.name,
        placeholder: "parameter_name",
        oninput: (event: Event) => {
          const next = (event.target as HTMLInputElement).value;
          const bound = state.boundValues[parameter.name];
          delete state.boundValues[parameter.name];
          parameter.name = next;
          state.boundValues[next] = bound ?? parameter.values.slice();
          refreshFeedback();
        },
      }),
      el(
        "select",
        {
          onchange: (event: Event) => {
            parameter.kind = (event.target as HTMLSelectElement)
              .value as typeof parameter.kind;
            refreshFeedback();
          },
        },
        el("option", {
          value: "configuration",
          ...(parameter.kind === "configuration" ? { selected: true } : {}),
        }, "configuration"),
        el("option", {
          value: "environment",
          ...(parameter.kind === "environment" ? { selected: true } : {}),
        }, "environment"),
      ),
      valuesEditor(index),
      el("button", {
        onclick: () => {
          delete state.boundValues[parameter.name];
          state.parameters.splice(index, 1);
          draw();
        },
      }, "remove"),
    );
  }

  async function submit(): Promise<void> {
    const errors = validateEditor(state);
    if (Object.keys(errors).length) {
      refreshFeedback();
      return;
    }
    const template = await api.createTemplate(toTemplateDoc(state));
    const study = await api.createStudy(toStudyDoc(state, template.id));
    await api.startStudy(study.id);
    navigate(`#/monitor/${study.id}`);
  }

  function draw(): void {
    const paramsBox = el(
      "div",
      {},
      ...state.parameters.map((_, index) => parameterRow(index)),
      el("button", {
        onclick: () => {
          const name = `param${state.parameters.length}`;
          state.parameters.push({
            name,
            kind: "configuration",
            values: [],
            unit: null,
          });
          state.boundValues[name] = [];
          draw();
        },
      }, "+ parameter"),
    );

    mount(
      root,
      el("h2", {}, "New study"),
      el("label", {}, "Template name ",
        el("input", {
          value: state.templateName,
          oninput: (event: Event) => {
            state.templateName = (event.target as HTMLInputElement).value;
            refreshFeedback();
          },
        }),
      ),
      el("label", {}, "Script ",
        el("textarea", {
          rows: "10",
          oninput: (event: Event) => {
            state.script = (event.target as HTMLTextAreaElement).value;
            refreshFeedback();
          },
        }, state.script),
      ),
      el("h3", {}, "Parameters"),
      paramsBox,
      el("h3", {}, "Execution"),
      el("label", {}, "Repetitions ",
        el("input", {
          type: "number", value: String(state.repetitions), min: "1",
          oninput: (event: Event) => {
            state.repetitions = Number((event.target as HTMLInputElement).value);
            refreshFeedback();
          },
        }),
      ),
      el("label", {}, "Base seed ",
        el("input", {
          type: "number", value: String(state.baseSeed), min: "0",
          oninput: (event: Event) => {
            state.baseSeed = Number((event.target as HTMLInputElement).value);
            refreshFeedback();
          },
        }),
      ),
      el("label", {}, "Per-experiment seconds ",
        el("input", {
          type: "number", value: String(perExperimentS),
          oninput: (event: Event) => {
            perExperimentS = Number((event.target as HTMLInputElement).value) || 60;
            refreshFeedback();
          },
        }),
      ),
      el("label", {}, "Workers ",
        el("input", {
          type: "number", value: String(workers), min: "1",
          oninput: (event: Event) => {
            workers = Number((event.target as HTMLInputElement).value) || 1;
            refreshFeedback();
          },
        }),
      ),
      feedback,
      errorBox,
      el("button", { class: "primary", onclick: () => void submit() }, "Create and start"),
    );
    refreshFeedback();
  }

  draw();
}
