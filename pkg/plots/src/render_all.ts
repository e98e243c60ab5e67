import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";
import { readCsv } from "./csv.js";
import {
  accelerationFigure,
  cellAccelFigure,
  cellSpeedFigure,
  minDistanceFigure,
  speedRatioFigure,
} from "./figures.js";

export function renderAll(metricsDir: string, outDir: string): string[] {
  const seriesPath = join(metricsDir, "series.csv");
  const cellsPath = join(metricsDir, "cells.csv");
  const series = readCsv(seriesPath);
  const cells = readCsv(cellsPath);
  mkdirSync(outDir, { recursive: true });
  const figures: [string, string][] = [
    ["speed_ratio_vs_p.svg", speedRatioFigure(series, seriesPath)],
    ["min_distance_vs_p.svg", minDistanceFigure(series, seriesPath)],
    ["accel_vs_p.svg", accelerationFigure(series, seriesPath)],
    ["cell_speed.svg", cellSpeedFigure(cells, cellsPath)],
    ["cell_accel.svg", cellAccelFigure(cells, cellsPath)],
  ];
  const written: string[] = [];
  for (const [name, svg] of figures) {
    const path = join(outDir, name);
    writeFileSync(path, svg);
    written.push(path);
  }
  return written;
}

const invokedDirectly = process.argv[1]?.endsWith("render_all.js");
if (invokedDirectly) {
  const [metricsDir, outDir] = process.argv.slice(2);
  if (!metricsDir || !outDir) {
    console.error("usage: render_all <metrics_dir> <out_dir>");
    process.exit(2);
  }
  try {
    for (const path of renderAll(metricsDir, outDir)) console.log(path);
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  }
}
