import { readFileSync } from "fs";

export interface Table {
  columns: string[];
  rows: string[][];
}

export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf8");
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error(`empty CSV file: ${path}`);
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((l) => l.split(","));
  return { columns, rows };
}

/** Numeric column accessor; empty fields become NaN (absent values). */
export function column(table: Table, name: string, file: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) throw new Error(`missing column '${name}' in ${file}`);
  return table.rows.map((r) => (r[idx] === "" ? NaN : Number(r[idx])));
}
