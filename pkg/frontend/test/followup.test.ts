import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import type { StudyDoc, TemplateDoc } from "../src/api.js";
import { instanceCount, validateEditor } from "../src/editor.js";
import { followUpEditor, narrowBindings } from "../src/followup.js";

const here = dirname(fileURLToPath(import.meta.url));
const template = JSON.parse(
  readFileSync(join(here, "fixtures", "template_fixture.json"), "utf-8"),
) as TemplateDoc;
const parent = JSON.parse(
  readFileSync(join(here, "fixtures", "study_fixture.json"), "utf-8"),
) as StudyDoc;

describe("binding narrowing", () => {
  const bound = { player: ["DASH.JS", "Shaka", "AStream"], level: [1, 2, 3] };

  it("equals filter keeps exactly the filtered value", () => {
    const out = narrowBindings(bound, [
      { parameter: "player", op: "equals", value: "DASH.JS" },
    ]);
    expect(out).toEqual({ player: ["DASH.JS"], level: [1, 2, 3] });
  });

  it("in filter intersects, range filter bounds numbers", () => {
    const out = narrowBindings(bound, [
      { parameter: "player", op: "in", values: ["Shaka", "AStream", "Ghost"] },
      { parameter: "level", op: "range", lo: 2, hi: null },
    ]);
    expect(out).toEqual({ player: ["Shaka", "AStream"], level: [2, 3] });
  });

  it("no filters keeps the parent bindings", () => {
    expect(narrowBindings(bound, [])).toEqual(bound);
  });

  it("distinguishes text from number when filtering", () => {
    const mixed = { buffer: ["Default", 5, 20] };
    const out = narrowBindings(mixed, [
      { parameter: "buffer", op: "equals", value: 5 },
    ]);
    expect(out).toEqual({ buffer: [5] });
    const textual = narrowBindings(mixed, [
      { parameter: "buffer", op: "equals", value: "Default" },
    ]);
    expect(textual).toEqual({ buffer: ["Default"] });
  });
});

describe("follow-up study flow on recorded fixtures", () => {
  it("prefills the editor with the parent's filtered bindings", () => {
    const state = followUpEditor(template, parent, [
      { parameter: "scheduler", op: "equals", value: "redundant" },
    ]);
    expect(state.boundValues["scheduler"]).toEqual(["redundant"]);
    expect(state.boundValues["loss_pct"]).toEqual(parent.bound_values["loss_pct"]);
    expect(state.repetitions).toBe(parent.repetitions);
    expect(state.script).toBe(template.script);
    expect(validateEditor(state)).toEqual({});
    expect(instanceCount(state)).toBe(
      parent.repetitions * 1 * parent.bound_values["loss_pct"].length,
    );
  });

  it("without filters the child equals the parent bindings", () => {
    const state = followUpEditor(template, parent, []);
    expect(state.boundValues).toEqual(parent.bound_values);
  });

  it("records the parent study id in provenance extra", () => {
    const state = followUpEditor(template, parent, []);
    expect(state.provenanceExtra["parent_study"]).toBe(parent.id);
  });
});
