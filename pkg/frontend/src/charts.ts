/** Chart geometry and SVG rendering. Every statistic shown is carried
 * verbatim from the API documents; this module only computes pixel
 * positions. */

import type { GroupSummaryDoc, ParetoPointDoc, Scalar } from "./api.js";

export interface Scale {
  domainMin: number;
  domainMax: number;
  rangeMin: number;
  rangeMax: number;
}

export function makeScale(
  values: number[],
  rangeMin: number,
  rangeMax: number,
): Scale {
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (!isFinite(lo) || !isFinite(hi)) {
    lo = 0;
    hi = 1;
  }
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = (hi - lo) * 0.05;
  return { domainMin: lo - pad, domainMax: hi + pad, rangeMin, rangeMax };
}

export function project(scale: Scale, value: number): number {
  const { domainMin, domainMax, rangeMin, rangeMax } = scale;
  return rangeMin + ((value - domainMin) / (domainMax - domainMin)) * (rangeMax - rangeMin);
}

export function fmt(value: number | null): string {
  if (value === null) return "-";
  if (Number.isInteger(value)) return String(value);
  return Number(value.toPrecision(5)).toString();
}

export function groupLabel(key: Record<string, Scalar>): string {
  const parts = Object.entries(key).map(([k, v]) => `${k}=${v}`);
  return parts.join(", ") || "all";
}

// -- box plots ---------------------------------------------------------------

export interface BoxGeom {
  /** the untouched server summary */
  stats: GroupSummaryDoc;
  label: string;
  centerX: number;
  boxLeft: number;
  boxRight: number;
  yQ1: number;
  yMedian: number;
  yQ3: number;
  yWhiskerLow: number;
  yWhiskerHigh: number;
  outlierYs: number[];
}

export interface BoxplotLayout {
  width: number;
  height: number;
  boxes: BoxGeom[];
  yScale: Scale;
}

export function buildBoxplot(
  groups: GroupSummaryDoc[],
  width = 720,
  height = 360,
): BoxplotLayout {
  const margin = { top: 16, right: 16, bottom: 48, left: 56 };
  const innerBottom = height - margin.bottom;
  const spanValues: number[] = [];
  for (const group of groups) {
    spanValues.push(group.min, group.max, ...group.outliers);
  }
  const yScale = makeScale(
    spanValues.length ? spanValues : [0, 1],
    innerBottom,
    margin.top,
  );
  const slots = Math.max(groups.length, 1);
  const step = (width - margin.left - margin.right) / slots;
  const boxHalf = Math.min(step * 0.3, 48);

  const boxes = groups.map((stats, index) => {
    const centerX = margin.left + step * (index + 0.5);
    return {
      stats,
      label: groupLabel(stats.group_key),
      centerX,
      boxLeft: centerX - boxHalf,
      boxRight: centerX + boxHalf,
      yQ1: project(yScale, stats.q1),
      yMedian: project(yScale, stats.median),
      yQ3: project(yScale, stats.q3),
      yWhiskerLow: project(yScale, stats.min),
      yWhiskerHigh: project(yScale, stats.max),
      outlierYs: stats.outliers.map((v) => project(yScale, v)),
    };
  });
  return { width, height, boxes, yScale };
}

function yAxisTicks(scale: Scale, count = 5): { value: number; y: number }[] {
  const ticks = [];
  for (let i = 0; i <= count; i++) {
    const value = scale.domainMin + ((scale.domainMax - scale.domainMin) * i) / count;
    ticks.push({ value, y: project(scale, value) });
  }
  return ticks;
}

export function renderBoxplotSvg(layout: BoxplotLayout): string {
  const parts: string[] = [
    `<svg viewBox="0 0 ${layout.width} ${layout.height}" class="chart boxplot" role="img">`,
  ];
  for (const tick of yAxisTicks(layout.yScale)) {
    parts.push(
      `<line x1="48" x2="${layout.width - 16}" y1="${tick.y}" y2="${tick.y}" class="gridline"/>`,
      `<text x="44" y="${tick.y + 4}" text-anchor="end" class="ticklabel">${fmt(tick.value)}</text>`,
    );
  }
  layout.boxes.forEach((box, index) => {
    const group = `<g class="box" data-index="${index}">`;
    const body = [
      `<line x1="${box.centerX}" x2="${box.centerX}" y1="${box.yWhiskerLow}" y2="${box.yQ1}" class="whisker"/>`,
      `<line x1="${box.centerX}" x2="${box.centerX}" y1="${box.yQ3}" y2="${box.yWhiskerHigh}" class="whisker"/>`,
      `<line x1="${box.boxLeft}" x2="${box.boxRight}" y1="${box.yWhiskerLow}" y2="${box.yWhiskerLow}" class="whisker-cap"/>`,
      `<line x1="${box.boxLeft}" x2="${box.boxRight}" y1="${box.yWhiskerHigh}" y2="${box.yWhiskerHigh}" class="whisker-cap"/>`,
      `<rect x="${box.boxLeft}" y="${Math.min(box.yQ1, box.yQ3)}" width="${box.boxRight - box.boxLeft}" height="${Math.abs(box.yQ1 - box.yQ3)}" class="iqr">` +
        `<title>${box.label}: n=${box.stats.count} median=${fmt(box.stats.median)} q1=${fmt(box.stats.q1)} q3=${fmt(box.stats.q3)}</title></rect>`,
      `<line x1="${box.boxLeft}" x2="${box.boxRight}" y1="${box.yMedian}" y2="${box.yMedian}" class="median"/>`,
      ...box.outlierYs.map(
        (y, i) =>
          `<circle cx="${box.centerX}" cy="${y}" r="3" class="outlier"><title>${fmt(box.stats.outliers[i])}</title></circle>`,
      ),
      `<text x="${box.centerX}" y="${layout.height - 28}" text-anchor="middle" class="boxlabel">${box.label}</text>`,
      `<text x="${box.centerX}" y="${layout.height - 12}" text-anchor="middle" class="boxsub">n=${box.stats.count}, median ${fmt(box.stats.median)}</text>`,
    ];
    parts.push(group + body.join("") + "</g>");
  });
  parts.push("</svg>");
  return parts.join("");
}

// -- pareto -------------------------------------------------------------------

export interface ParetoGeom {
  point: ParetoPointDoc;
  label: string;
  cx: number;
  cy: number;
}

export interface ParetoLayout {
  width: number;
  height: number;
  dots: ParetoGeom[];
  frontier: ParetoGeom[];
  xScale: Scale;
  yScale: Scale;
}

export function buildPareto(
  points: ParetoPointDoc[],
  width = 720,
  height = 360,
): ParetoLayout {
  const margin = { top: 16, right: 16, bottom: 40, left: 56 };
  const xScale = makeScale(
    points.length ? points.map((p) => p.x) : [0, 1],
    margin.left,
    width - margin.right,
  );
  const yScale = makeScale(
    points.length ? points.map((p) => p.y) : [0, 1],
    height - margin.bottom,
    margin.top,
  );
  const dots = points.map((point) => ({
    point,
    label: point.experiment_id ?? groupLabel(point.group_key ?? {}),
    cx: project(xScale, point.x),
    cy: project(yScale, point.y),
  }));
  const frontier = dots
    .filter((d) => d.point.on_frontier)
    .sort((a, b) => a.point.x - b.point.x || a.point.y - b.point.y);
  return { width, height, dots, frontier, xScale, yScale };
}

export function renderParetoSvg(layout: ParetoLayout): string {
  const parts: string[] = [
    `<svg viewBox="0 0 ${layout.width} ${layout.height}" class="chart pareto" role="img">`,
  ];
  for (const tick of yAxisTicks(layout.yScale)) {
    parts.push(
      `<line x1="48" x2="${layout.width - 16}" y1="${tick.y}" y2="${tick.y}" class="gridline"/>`,
      `<text x="44" y="${tick.y + 4}" text-anchor="end" class="ticklabel">${fmt(tick.value)}</text>`,
    );
  }
  if (layout.frontier.length > 1) {
    const path = layout.frontier.map((d) => `${d.cx},${d.cy}`).join(" ");
    parts.push(`<polyline points="${path}" class="frontier-line"/>`);
  }
  layout.dots.forEach((dot, index) => {
    const cls = dot.point.on_frontier ? "point frontier" : "point dominated";
    parts.push(
      `<circle cx="${dot.cx}" cy="${dot.cy}" r="5" class="${cls}" data-index="${index}">` +
        `<title>${dot.label}: (${fmt(dot.point.x)}, ${fmt(dot.point.y)})</title></circle>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}

// -- drill-down time series -----------------------------------------------------

export interface SeriesLayout {
  metric: string;
  width: number;
  height: number;
  path: string;
  points: { t: number; v: number; cx: number; cy: number }[];
}

export function buildSeries(
  metric: string,
  records: { wall_offset_ms: number; value: number }[],
  width = 340,
  height = 120,
): SeriesLayout {
  const xs = records.map((r) => r.wall_offset_ms);
  const ys = records.map((r) => r.value);
  const xScale = makeScale(xs.length ? xs : [0, 1], 36, width - 8);
  const yScale = makeScale(ys.length ? ys : [0, 1], height - 18, 8);
  const points = records.map((r) => ({
    t: r.wall_offset_ms,
    v: r.value,
    cx: project(xScale, r.wall_offset_ms),
    cy: project(yScale, r.value),
  }));
  const path = points.map((p, i) => `${i ? "L" : "M"}${p.cx},${p.cy}`).join(" ");
  return { metric, width, height, path, points };
}

export function renderSeriesSvg(layout: SeriesLayout): string {
  const dots = layout.points
    .map(
      (p) =>
        `<circle cx="${p.cx}" cy="${p.cy}" r="2.5" class="seriespt"><title>${fmt(p.v)} @ ${p.t}ms</title></circle>`,
    )
    .join("");
  return (
    `<svg viewBox="0 0 ${layout.width} ${layout.height}" class="chart series" role="img">` +
    `<text x="8" y="14" class="seriestitle">${layout.metric}</text>` +
    `<path d="${layout.path}" class="seriesline"/>` +
    dots +
    "</svg>"
  );
}
