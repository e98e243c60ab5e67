import { Table, column } from "./csv.js";
import {
  Frame,
  axes,
  dashedHLine,
  document,
  padRange,
  rampColor,
  scatter,
  MARGIN,
  WIDTH,
  HEIGHT,
} from "./svg.js";

export const D_MIN = 2.1; // m, minimum allowed inter-vehicle distance

function scatterFigure(
  table: Table,
  file: string,
  ycol: string,
  title: string,
  ylab: string,
  extras?: (frame: Frame) => string,
  includeY: number[] = [],
): string {
  const xs = column(table, "p_bar", file);
  const ys = column(table, ycol, file);
  const frame = new Frame(padRange(xs, [0, 1]), padRange(ys, includeY));
  let body = axes(frame, title, "normalized local coordinate", ylab);
  body += "\n" + scatter(frame, xs, ys, "#1f5fa8");
  if (extras) body += "\n" + extras(frame);
  return document(body);
}

export function speedRatioFigure(series: Table, file: string): string {
  return scatterFigure(series, file, "v_bar_pct",
    "Speed ratio over normalized local coordinate", "speed ratio [%]",
    undefined, [0, 100]);
}

export function minDistanceFigure(series: Table, file: string): string {
  return scatterFigure(series, file, "d_min_m",
    "Minimum distance over normalized local coordinate", "minimum distance [m]",
    (frame) => dashedHLine(frame, D_MIN, `minimum allowed distance ${D_MIN} m`),
    [0, D_MIN]);
}

export function accelerationFigure(series: Table, file: string): string {
  return scatterFigure(series, file, "u_ms2",
    "Acceleration over normalized local coordinate", "acceleration [m/s^2]",
    undefined, [0]);
}

interface CellMap {
  values: Map<string, number>;
  counts: Map<string, number>;
  xr: [number, number];
  yr: [number, number];
}

function readCells(cells: Table, file: string, valueCol: string): CellMap {
  const cx = column(cells, "cell_x", file);
  const cy = column(cells, "cell_y", file);
  const vv = column(cells, valueCol, file);
  const cc = column(cells, "count", file);
  const values = new Map<string, number>();
  const counts = new Map<string, number>();
  for (let i = 0; i < cx.length; i++) {
    values.set(`${cx[i]};${cy[i]}`, vv[i]);
    counts.set(`${cx[i]};${cy[i]}`, cc[i]);
  }
  const xr: [number, number] = cx.length ? [Math.min(...cx), Math.max(...cx)] : [0, 0];
  const yr: [number, number] = cy.length ? [Math.min(...cy), Math.max(...cy)] : [0, 0];
  return { values, counts, xr, yr };
}

function quantile(sorted: number[], q: number): number {
  if (sorted.length === 0) return 0;
  const pos = q * (sorted.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo);
}

export function heatmapFigure(
  cells: Table,
  file: string,
  valueCol: string,
  title: string,
  unit: string,
): string {
  const map = readCells(cells, file, valueCol);
  const all = [...map.values.values()].sort((a, b) => a - b);
  // clip the color range to the observed 1st..99th percentile
  const lo = quantile(all, 0.01);
  const hi = Math.max(quantile(all, 0.99), lo + 1e-9);
  const nx = map.xr[1] - map.xr[0] + 1;
  const ny = map.yr[1] - map.yr[0] + 1;
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const s = Math.min(plotW / nx, plotH / ny);
  const parts: string[] = [];
  parts.push(`<text x="${WIDTH / 2}" y="22" font-size="14" text-anchor="middle" fill="#111">${title}</text>`);
  // empty cells stay in the distinct background shade
  parts.push(`<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${(nx * s).toFixed(1)}" height="${(ny * s).toFixed(1)}" fill="#e8e8e8" stroke="#333"/>`);
  for (const [key, v] of [...map.values.entries()].sort()) {
    const [cx, cy] = key.split(";").map(Number);
    const px = MARGIN.left + (cx - map.xr[0]) * s;
    const py = MARGIN.top + (map.yr[1] - cy) * s; // north up
    const t = (Math.max(lo, Math.min(hi, v)) - lo) / (hi - lo);
    parts.push(`<rect x="${px.toFixed(1)}" y="${py.toFixed(1)}" width="${s.toFixed(2)}" height="${s.toFixed(2)}" fill="${rampColor(t)}"/>`);
  }
  // color bar
  const barX = WIDTH - MARGIN.right - 10;
  for (let i = 0; i < 40; i++) {
    const py = MARGIN.top + plotH - ((i + 1) * plotH) / 40;
    parts.push(`<rect x="${barX}" y="${py.toFixed(1)}" width="8" height="${(plotH / 40).toFixed(2)}" fill="${rampColor(i / 39)}"/>`);
  }
  parts.push(`<text x="${barX - 4}" y="${MARGIN.top + plotH}" font-size="10" text-anchor="end" fill="#333">${lo.toPrecision(3)} ${unit}</text>`);
  parts.push(`<text x="${barX - 4}" y="${MARGIN.top + 10}" font-size="10" text-anchor="end" fill="#333">${hi.toPrecision(3)} ${unit}</text>`);
  return document(parts.join("\n"));
}

export function cellSpeedFigure(cells: Table, file: string): string {
  return heatmapFigure(cells, file, "mean_v_kmh",
    "Average speed per road-network cell", "km/h");
}

export function cellAccelFigure(cells: Table, file: string): string {
  return heatmapFigure(cells, file, "mean_u_ms2",
    "Average acceleration per road-network cell", "m/s^2");
}
