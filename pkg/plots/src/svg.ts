/** Deterministic SVG primitives: fixed canvas, fixed styles, no timestamps. */

export const WIDTH = 720;
export const HEIGHT = 480;
export const MARGIN = { left: 64, right: 20, top: 36, bottom: 48 };

export interface Range {
  lo: number;
  hi: number;
}

export function padRange(values: number[], include: number[] = []): Range {
  const finite = values.filter((v) => Number.isFinite(v)).concat(include);
  if (finite.length === 0) return { lo: 0, hi: 1 };
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = 0.05 * (hi - lo);
  return { lo: lo - pad, hi: hi + pad };
}

export class Frame {
  constructor(readonly x: Range, readonly y: Range) {}

  px(v: number): number {
    const w = WIDTH - MARGIN.left - MARGIN.right;
    return MARGIN.left + ((v - this.x.lo) / (this.x.hi - this.x.lo)) * w;
  }

  py(v: number): number {
    const h = HEIGHT - MARGIN.top - MARGIN.bottom;
    return HEIGHT - MARGIN.bottom - ((v - this.y.lo) / (this.y.hi - this.y.lo)) * h;
  }
}

function ticks(r: Range, n = 5): number[] {
  const out: number[] = [];
  for (let i = 0; i <= n; i++) out.push(r.lo + ((r.hi - r.lo) * i) / n);
  return out;
}

export function axes(frame: Frame, title: string, xlab: string, ylab: string): string {
  const parts: string[] = [];
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  parts.push(`<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" fill="none" stroke="#333" stroke-width="1"/>`);
  for (const t of ticks(frame.x)) {
    const px = frame.px(t).toFixed(1);
    parts.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 4}" stroke="#333"/>`);
    parts.push(`<text x="${px}" y="${y0 + 18}" font-size="11" text-anchor="middle" fill="#333">${t.toPrecision(3)}</text>`);
  }
  for (const t of ticks(frame.y)) {
    const py = frame.py(t).toFixed(1);
    parts.push(`<line x1="${x0 - 4}" y1="${py}" x2="${x0}" y2="${py}" stroke="#333"/>`);
    parts.push(`<text x="${x0 - 8}" y="${py}" font-size="11" text-anchor="end" dominant-baseline="middle" fill="#333">${t.toPrecision(3)}</text>`);
  }
  parts.push(`<text x="${(x0 + x1) / 2}" y="${HEIGHT - 12}" font-size="13" text-anchor="middle" fill="#111">${xlab}</text>`);
  parts.push(`<text x="18" y="${(y0 + y1) / 2}" font-size="13" text-anchor="middle" fill="#111" transform="rotate(-90 18 ${(y0 + y1) / 2})">${ylab}</text>`);
  parts.push(`<text x="${(x0 + x1) / 2}" y="22" font-size="14" text-anchor="middle" fill="#111">${title}</text>`);
  return parts.join("\n");
}

export function scatter(frame: Frame, xs: number[], ys: number[], color: string): string {
  const dots: string[] = [];
  for (let i = 0; i < xs.length; i++) {
    if (!Number.isFinite(xs[i]) || !Number.isFinite(ys[i])) continue;
    dots.push(`<circle cx="${frame.px(xs[i]).toFixed(1)}" cy="${frame.py(ys[i]).toFixed(1)}" r="1.6" fill="${color}" fill-opacity="0.25"/>`);
  }
  return dots.join("\n");
}

export function dashedHLine(frame: Frame, y: number, label: string): string {
  const py = frame.py(y).toFixed(1);
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  return (
    `<line x1="${x0}" y1="${py}" x2="${x1}" y2="${py}" stroke="#c0392b" stroke-width="1.5" stroke-dasharray="7 5"/>\n` +
    `<text x="${x1 - 4}" y="${Number(py) - 5}" font-size="11" text-anchor="end" fill="#c0392b">${label}</text>`
  );
}

/** Blue-to-red ramp over [0, 1]. */
export function rampColor(t: number): string {
  const c = Math.max(0, Math.min(1, t));
  const r = Math.round(40 + 200 * c);
  const g = Math.round(60 + 40 * (1 - Math.abs(c - 0.5) * 2));
  const b = Math.round(240 - 200 * c);
  return `rgb(${r},${g},${b})`;
}

export function document(body: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">\n` +
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n` +
    body +
    "\n</svg>\n"
  );
}
