/** Follow-up studies: reopen the editor prefilled with the parent study's
 * bindings narrowed to the analysis view's active filters. */

import type { FilterDoc, Scalar, StudyDoc, TemplateDoc } from "./api.js";
import { EditorState, editorFromTemplate, scalarEquals } from "./editor.js";

function passes(filter: FilterDoc, value: Scalar): boolean {
  if (filter.op === "equals") {
    return filter.value !== undefined && scalarEquals(value, filter.value);
  }
  if (filter.op === "in") {
    return (filter.values ?? []).some((v) => scalarEquals(v, value));
  }
  if (typeof value !== "number") return false;
  if (filter.lo !== null && filter.lo !== undefined && value < filter.lo) return false;
  if (filter.hi !== null && filter.hi !== undefined && value > filter.hi) return false;
  return true;
}

/** Narrow each parameter's bound values by every filter that targets it;
 * parameters without filters keep the parent bindings unchanged. */
export function narrowBindings(
  bound: Record<string, Scalar[]>,
  filters: FilterDoc[],
): Record<string, Scalar[]> {
  const out: Record<string, Scalar[]> = {};
  for (const [name, values] of Object.entries(bound)) {
    const applicable = filters.filter((f) => f.parameter === name);
    out[name] = values.filter((v) => applicable.every((f) => passes(f, v)));
  }
  return out;
}

export function followUpEditor(
  template: TemplateDoc,
  parent: StudyDoc,
  filters: FilterDoc[],
): EditorState {
  const state = editorFromTemplate(template, parent);
  const narrowed = narrowBindings(parent.bound_values, filters);
  for (const [name, values] of Object.entries(narrowed)) {
    // an over-narrow filter may empty a binding; leave it for the editor's
    // validation to flag rather than silently re-widening
    state.boundValues[name] = values;
  }
  state.provenanceExtra = { ...state.provenanceExtra, parent_study: parent.id };
  return state;
}
