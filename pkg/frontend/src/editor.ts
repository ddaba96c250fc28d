/** Study editor model: template drafting, value binding, live instance count
 * and duration feedback. Pure state + validation; the view is DOM glue. */

import type { MetricDirection, ParamKind, Scalar, TemplateDoc, StudyDoc } from "./api.js";

export interface ParameterDraft {
  name: string;
  kind: ParamKind;
  values: Scalar[];
  unit: string | null;
}

export interface MetricDraft {
  name: string;
  direction: MetricDirection;
  unit: string | null;
}

export interface EditorState {
  templateName: string;
  script: string;
  parameters: ParameterDraft[];
  metrics: MetricDraft[];
  /** per parameter, the subset of values bound for this study */
  boundValues: Record<string, Scalar[]>;
  repetitions: number;
  baseSeed: number;
  provenanceExtra: Record<string, string>;
}

export function emptyEditor(): EditorState {
  return {
    templateName: "",
    script: "#!/usr/bin/env python3\n",
    parameters: [],
    metrics: [],
    boundValues: {},
    repetitions: 1,
    baseSeed: 0,
    provenanceExtra: {},
  };
}

export function editorFromTemplate(template: TemplateDoc, study?: StudyDoc): EditorState {
  const state = emptyEditor();
  state.templateName = template.name;
  state.script = template.script;
  state.parameters = template.parameters.map((p) => ({
    name: p.name,
    kind: p.kind,
    values: p.values.slice(),
    unit: p.unit ?? null,
  }));
  state.metrics = template.declared_metrics.map((m) => ({
    name: m.name,
    direction: m.direction,
    unit: m.unit ?? null,
  }));
  for (const p of template.parameters) {
    state.boundValues[p.name] = (study ? study.bound_values[p.name] : p.values).slice();
  }
  if (study) {
    state.repetitions = study.repetitions;
    state.baseSeed = study.base_seed;
  }
  return state;
}

const IDENTIFIER = /^[A-Za-z_][A-Za-z0-9_]*$/;

export function scalarEquals(a: Scalar, b: Scalar): boolean {
  return typeof a === typeof b && a === b;
}

/** Parse one text field into a typed value: JSON literal or bare text. */
export function parseValueText(raw: string): Scalar {
  const trimmed = raw.trim();
  if (trimmed === "true") return true;
  if (trimmed === "false") return false;
  if (trimmed !== "" && !isNaN(Number(trimmed))) return Number(trimmed);
  return raw;
}

export function instanceCount(state: EditorState): number {
  let count = state.repetitions;
  for (const p of state.parameters) {
    count *= (state.boundValues[p.name] ?? []).length;
  }
  return count;
}

export function estimatedDurationS(
  count: number,
  perExperimentS: number,
  workers: number,
): number {
  return Math.ceil(count / Math.max(1, workers)) * perExperimentS;
}

/** Field-keyed validation errors; empty object means submittable. */
export function validateEditor(state: EditorState): Record<string, string> {
  const errors: Record<string, string> = {};
  if (!state.templateName.trim()) errors["templateName"] = "name is required";
  if (!state.script.trim()) errors["script"] = "script body is required";
  const seen = new Set<string>();
  state.parameters.forEach((p, index) => {
    const field = `parameters[${index}]`;
    if (!IDENTIFIER.test(p.name)) errors[field] = "name must be an identifier";
    else if (seen.has(p.name)) errors[field] = "duplicate parameter name";
    seen.add(p.name);
    if (p.values.length === 0) errors[`${field}.values`] = "at least one value";
    const unique = new Set(p.values.map((v) => `${typeof v}:${v}`));
    if (unique.size !== p.values.length) errors[`${field}.values`] = "duplicate values";
    const bound = state.boundValues[p.name] ?? [];
    if (bound.length === 0) errors[`${field}.bound`] = "bind at least one value";
    for (const v of bound) {
      if (!p.values.some((w) => scalarEquals(v, w))) {
        errors[`${field}.bound`] = "bound value not in the value list";
      }
    }
  });
  const metricSeen = new Set<string>();
  state.metrics.forEach((m, index) => {
    const field = `metrics[${index}]`;
    if (!IDENTIFIER.test(m.name)) errors[field] = "name must be an identifier";
    else if (metricSeen.has(m.name)) errors[field] = "duplicate metric name";
    metricSeen.add(m.name);
  });
  if (!Number.isInteger(state.repetitions) || state.repetitions < 1) {
    errors["repetitions"] = "repetitions must be >= 1";
  }
  if (!Number.isInteger(state.baseSeed) || state.baseSeed < 0) {
    errors["baseSeed"] = "base seed must be a nonnegative integer";
  }
  return errors;
}

export function toTemplateDoc(state: EditorState) {
  return {
    name: state.templateName,
    script: state.script,
    parameters: state.parameters.map((p) => ({
      name: p.name,
      kind: p.kind,
      values: p.values,
      unit: p.unit,
    })),
    declared_metrics: state.metrics.map((m) => ({
      name: m.name,
      direction: m.direction,
      unit: m.unit,
    })),
  };
}

export function toStudyDoc(state: EditorState, templateId: string) {
  return {
    template_id: templateId,
    bound_values: state.boundValues,
    repetitions: state.repetitions,
    base_seed: state.baseSeed,
    provenance: { extra: state.provenanceExtra },
  };
}
