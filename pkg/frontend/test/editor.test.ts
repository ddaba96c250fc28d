import { describe, expect, it } from "vitest";

import {
  emptyEditor,
  estimatedDurationS,
  instanceCount,
  parseValueText,
  toStudyDoc,
  toTemplateDoc,
  validateEditor,
} from "../src/editor.js";

function table1Editor() {
  const state = emptyEditor();
  state.templateName = "dash-sweep";
  state.script = "#!/bin/sh\nexit 0\n";
  const spec: [string, "configuration" | "environment", (string | number | boolean)[]][] = [
    ["player", "configuration", ["DASH.JS", "Shaka", "AStream"]],
    ["adaptation", "configuration", ["Standard", "BOLA"]],
    ["segment_length", "configuration", [1, 2, 6, 10, 15]],
    ["target_buffer", "configuration", ["Default", 5, 20]],
    ["bw_mean", "environment", [0.8, 2, 5, 7.5, 10]],
    ["bw_variance", "environment", [0, 0.8, 2, 5]],
  ];
  for (const [name, kind, values] of spec) {
    state.parameters.push({ name, kind, values, unit: null });
    state.boundValues[name] = values.slice();
  }
  return state;
}

describe("live editor feedback", () => {
  it("shows the full cross-product before submission", () => {
    const state = table1Editor();
    expect(instanceCount(state)).toBe(1800);
    expect(estimatedDurationS(1800, 120, 1)).toBe(216000);
    expect(estimatedDurationS(1800, 120, 45)).toBe(4800);
  });

  it("narrowing a binding shrinks the count immediately", () => {
    const state = table1Editor();
    state.boundValues["player"] = ["DASH.JS"];
    expect(instanceCount(state)).toBe(600);
    state.repetitions = 3;
    expect(instanceCount(state)).toBe(1800);
  });

  it("toggling parameter kind changes metadata only", () => {
    const state = table1Editor();
    const before = instanceCount(state);
    state.parameters[0].kind = "environment";
    expect(instanceCount(state)).toBe(before);
    expect(validateEditor(state)).toEqual({});
  });

  it("flags an empty value list inline", () => {
    const state = table1Editor();
    state.parameters[2].values = [];
    state.boundValues["segment_length"] = [];
    const errors = validateEditor(state);
    expect(errors["parameters[2].values"]).toBeTruthy();
    expect(instanceCount(state)).toBe(0);
  });

  it("rejects bad identifiers, duplicates and bad bindings", () => {
    const state = table1Editor();
    state.parameters[0].name = "1bad";
    expect(validateEditor(state)["parameters[0]"]).toMatch(/identifier/);
    state.parameters[0].name = "adaptation";
    expect(validateEditor(state)["parameters[1]"]).toMatch(/duplicate/);
    const fresh = table1Editor();
    fresh.boundValues["player"] = ["Nonexistent"];
    expect(validateEditor(fresh)["parameters[0].bound"]).toMatch(/not in/);
    fresh.boundValues["player"] = [];
    expect(validateEditor(fresh)["parameters[0].bound"]).toMatch(/at least one/);
  });

  it("keeps text and number values apart", () => {
    expect(parseValueText("5")).toBe(5);
    expect(parseValueText("0.8")).toBe(0.8);
    expect(parseValueText("true")).toBe(true);
    expect(parseValueText("Default")).toBe("Default");
  });
});

describe("submission documents", () => {
  it("produces template and study docs in the wire shape", () => {
    const state = table1Editor();
    state.repetitions = 2;
    state.baseSeed = 99;
    const template = toTemplateDoc(state);
    expect(template.parameters).toHaveLength(6);
    expect(template.parameters[0]).toEqual({
      name: "player",
      kind: "configuration",
      values: ["DASH.JS", "Shaka", "AStream"],
      unit: null,
    });
    const study = toStudyDoc(state, "template-1");
    expect(study.template_id).toBe("template-1");
    expect(study.repetitions).toBe(2);
    expect(study.base_seed).toBe(99);
    expect(study.bound_values["bw_variance"]).toEqual([0, 0.8, 2, 5]);
  });
});
