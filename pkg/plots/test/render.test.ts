import { mkdtempSync, readFileSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";
import { renderAll } from "../src/render_all.js";
import { minDistanceFigure, speedRatioFigure } from "../src/figures.js";
import { readCsv } from "../src/csv.js";

const SERIES_HEADER = "vehicle,k,p_bar,v_bar_pct,d_min_m,u_ms2";
const CELLS_HEADER = "cell_x,cell_y,mean_v_kmh,mean_u_ms2,count";

function fixtureDir(series: string[], cells: string[]): string {
  const dir = mkdtempSync(join(tmpdir(), "cfplots-"));
  writeFileSync(join(dir, "series.csv"), [SERIES_HEADER, ...series, ""].join("\n"));
  writeFileSync(join(dir, "cells.csv"), [CELLS_HEADER, ...cells, ""].join("\n"));
  return dir;
}

const SAMPLE_SERIES = [
  "1,0,0.0,100.0,,0.0",
  "1,1,0.25,96.0,8.5,-0.5",
  "1,2,0.5,88.0,4.2,-1.2",
  "1,3,0.75,95.0,6.0,0.8",
  "1,4,1.0,100.0,12.0,0.0",
  "2,0,0.0,100.0,3.1,0.0",
  "2,1,0.5,74.0,2.4,-2.0",
  "2,2,1.0,99.0,9.9,1.0",
];

const SAMPLE_CELLS = [
  "0,0,52.0,-0.1,12",
  "1,0,47.5,-0.6,9",
  "2,1,50.1,0.2,30",
  "3,3,44.0,-1.0,4",
];

describe("render_all", () => {
  it("renders all five figure kinds", () => {
    const dir = fixtureDir(SAMPLE_SERIES, SAMPLE_CELLS);
    const out = join(dir, "figs");
    const written = renderAll(dir, out);
    expect(written.length).toBe(5);
    for (const path of written) {
      const svg = readFileSync(path, "utf8");
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg.includes("</svg>")).toBe(true);
    }
  });

  it("draws the dashed minimum-distance reference at 2.1 m", () => {
    const series = readCsv(join(fixtureDir(SAMPLE_SERIES, SAMPLE_CELLS), "series.csv"));
    const svg = minDistanceFigure(series, "series.csv");
    expect(svg).toContain("stroke-dasharray");
    expect(svg).toContain("minimum allowed distance 2.1 m");
  });

  it("is byte-identical across repeated renders", () => {
    const dir = fixtureDir(SAMPLE_SERIES, SAMPLE_CELLS);
    const a = renderAll(dir, join(dir, "a"));
    const b = renderAll(dir, join(dir, "b"));
    for (let i = 0; i < a.length; i++) {
      expect(readFileSync(a[i], "utf8")).toEqual(readFileSync(b[i], "utf8"));
    }
  });

  it("renders empty axes from an empty-but-valid series", () => {
    const dir = fixtureDir([], ["0,0,50.0,0.0,1"]);
    const written = renderAll(dir, join(dir, "figs"));
    expect(written.length).toBe(5);
    const svg = readFileSync(written[0], "utf8");
    expect(svg).toContain("<svg");
  });

  it("renders a single monotone trace", () => {
    const series = readCsv(join(fixtureDir(
      ["7,0,0.0,100.0,,0.0", "7,1,0.5,100.0,,0.0", "7,2,1.0,100.0,,0.0"],
      SAMPLE_CELLS), "series.csv"));
    const svg = speedRatioFigure(series, "series.csv");
    const dots = svg.match(/<circle/g) ?? [];
    expect(dots.length).toBe(3);
  });

  it("names the missing column", () => {
    const dir = mkdtempSync(join(tmpdir(), "cfplots-"));
    writeFileSync(join(dir, "series.csv"),
      "vehicle,k,p_bar,v_bar_pct,u_ms2\n1,0,0.0,100.0,0.0\n");
    writeFileSync(join(dir, "cells.csv"), CELLS_HEADER + "\n");
    expect(() => renderAll(dir, join(dir, "figs"))).toThrowError(/d_min_m/);
  });

  it("marks absent distances as gaps, not zeros", () => {
    const series = readCsv(join(fixtureDir(
      ["1,0,0.0,100.0,,0.0", "1,1,1.0,100.0,5.0,0.0"], SAMPLE_CELLS), "series.csv"));
    const svg = minDistanceFigure(series, "series.csv");
    const dots = svg.match(/<circle/g) ?? [];
    expect(dots.length).toBe(1);
  });

  it("renders a real nominal run's metrics exports, twice, byte-identical", () => {
    const nominal = new URL("./fixtures/nominal", import.meta.url).pathname;
    const out = mkdtempSync(join(tmpdir(), "cfplots-nominal-"));
    const a = renderAll(nominal, join(out, "a"));
    const b = renderAll(nominal, join(out, "b"));
    expect(a.length).toBe(5);
    for (let i = 0; i < a.length; i++) {
      expect(readFileSync(a[i], "utf8")).toEqual(readFileSync(b[i], "utf8"));
    }
    const minDist = readFileSync(a[1], "utf8");
    expect(minDist).toContain("stroke-dasharray");
    expect(minDist).toContain("2.1");
  });
});
