/** Analysis view state, serializable to the URL fragment so any view can be
 * shared as a link. Serialization is canonical (fixed key order), which makes
 * serialize(deserialize(fragment)) === fragment for fragments we produced. */

import type { FilterDoc, MetricDirection, Reducer, Scalar } from "./api.js";

export type ChartKind = "boxplot" | "pareto";

export interface AnalysisViewState {
  studyId: string;
  metric: string;
  reducer: Reducer;
  filters: FilterDoc[];
  groupBy: string[];
  chartKind: ChartKind;
  paretoX: string;
  paretoY: string;
  dirX: Exclude<MetricDirection, "neutral"> | null;
  dirY: Exclude<MetricDirection, "neutral"> | null;
  includeFailed: boolean;
}

export function defaultViewState(studyId: string): AnalysisViewState {
  return {
    studyId,
    metric: "",
    reducer: "last",
    filters: [],
    groupBy: [],
    chartKind: "boxplot",
    paretoX: "",
    paretoY: "",
    dirX: null,
    dirY: null,
    includeFailed: false,
  };
}

function canonicalFilter(filter: FilterDoc): Record<string, unknown> {
  const out: Record<string, unknown> = { parameter: filter.parameter, op: filter.op };
  if (filter.op === "equals") out.value = filter.value as Scalar;
  if (filter.op === "in") out.values = (filter.values ?? []).slice();
  if (filter.op === "range") {
    out.lo = filter.lo ?? null;
    out.hi = filter.hi ?? null;
  }
  return out;
}

function canonical(state: AnalysisViewState): Record<string, unknown> {
  return {
    studyId: state.studyId,
    metric: state.metric,
    reducer: state.reducer,
    filters: state.filters.map(canonicalFilter),
    groupBy: state.groupBy.slice(),
    chartKind: state.chartKind,
    paretoX: state.paretoX,
    paretoY: state.paretoY,
    dirX: state.dirX,
    dirY: state.dirY,
    includeFailed: state.includeFailed,
  };
}

const FRAGMENT_PREFIX = "#/analysis/";

export function serializeViewState(state: AnalysisViewState): string {
  return FRAGMENT_PREFIX + encodeURIComponent(JSON.stringify(canonical(state)));
}

export function deserializeViewState(fragment: string): AnalysisViewState | null {
  if (!fragment.startsWith(FRAGMENT_PREFIX)) return null;
  let parsed: unknown;
  try {
    parsed = JSON.parse(decodeURIComponent(fragment.slice(FRAGMENT_PREFIX.length)));
  } catch {
    return null;
  }
  if (typeof parsed !== "object" || parsed === null) return null;
  const doc = parsed as Record<string, unknown>;
  if (typeof doc.studyId !== "string") return null;
  const state = defaultViewState(doc.studyId);
  if (typeof doc.metric === "string") state.metric = doc.metric;
  if (typeof doc.reducer === "string") state.reducer = doc.reducer as Reducer;
  if (Array.isArray(doc.filters)) state.filters = doc.filters as FilterDoc[];
  if (Array.isArray(doc.groupBy)) state.groupBy = doc.groupBy as string[];
  if (doc.chartKind === "boxplot" || doc.chartKind === "pareto") {
    state.chartKind = doc.chartKind;
  }
  if (typeof doc.paretoX === "string") state.paretoX = doc.paretoX;
  if (typeof doc.paretoY === "string") state.paretoY = doc.paretoY;
  if (doc.dirX === "maximize" || doc.dirX === "minimize") state.dirX = doc.dirX;
  if (doc.dirY === "maximize" || doc.dirY === "minimize") state.dirY = doc.dirY;
  state.includeFailed = doc.includeFailed === true;
  return state;
}

export function cubeRequestFor(state: AnalysisViewState) {
  return {
    study_id: state.studyId,
    metric: state.metric,
    reducer: state.reducer,
    filters: state.filters,
    group_by: state.groupBy,
    include_failed: state.includeFailed,
  };
}

export function paretoRequestFor(state: AnalysisViewState) {
  return {
    study_id: state.studyId,
    metric_x: state.paretoX,
    metric_y: state.paretoY,
    dir_x: state.dirX,
    dir_y: state.dirY,
    group_by: state.groupBy,
  };
}
