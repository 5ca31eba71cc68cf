// Spectrogram rasterization: pure function from column history to RGBA,
// newest column at the right edge, low frequencies at the bottom, and a
// monotone dark-to-bright color ramp (0 dB brightest).

import { ColumnRing } from './ring.js';

interface Stop {
  pos: number;
  r: number;
  g: number;
  b: number;
}

// monotone-brightness ramp: near-black, deep violet, red-orange, yellow-white
const RAMP: Stop[] = [
  { pos: 0.0, r: 8, g: 6, b: 16 },
  { pos: 0.25, r: 66, g: 23, b: 94 },
  { pos: 0.55, r: 188, g: 55, b: 40 },
  { pos: 0.8, r: 244, g: 150, b: 28 },
  { pos: 1.0, r: 252, g: 252, b: 210 },
];

export function buildColorLut(): Uint8ClampedArray {
  const lut = new Uint8ClampedArray(256 * 3);
  for (let i = 0; i < 256; i++) {
    const pos = i / 255;
    let j = 0;
    while (j < RAMP.length - 2 && pos > RAMP[j + 1].pos) j++;
    const a = RAMP[j];
    const b = RAMP[j + 1];
    const t = (pos - a.pos) / (b.pos - a.pos);
    lut[3 * i] = Math.round(a.r + t * (b.r - a.r));
    lut[3 * i + 1] = Math.round(a.g + t * (b.g - a.g));
    lut[3 * i + 2] = Math.round(a.b + t * (b.b - a.b));
  }
  return lut;
}

const LUT = buildColorLut();

export function dbToColorIndex(db: number): number {
  const clamped = Math.min(0, Math.max(-80, db));
  return Math.round(((clamped + 80) / 80) * 255);
}

// Writes width*height RGBA pixels into `out`; pixel column x shows the
// column aged (width-1-x), so history scrolls left as columns arrive.
export function renderSpectrogram(
  ring: ColumnRing,
  width: number,
  height: number,
  out: Uint8ClampedArray,
): void {
  const nBins = ring.nBins;
  for (let x = 0; x < width; x++) {
    const age = width - 1 - x;
    const column = age < ring.length ? ring.column(age) : null;
    for (let y = 0; y < height; y++) {
      // bottom row = bin 0; max-pool the bins covered by this pixel row
      const binLo = Math.floor(((height - 1 - y) / height) * nBins);
      const binHi = Math.max(binLo + 1, Math.floor(((height - y) / height) * nBins));
      let db = -80;
      if (column !== null) {
        for (let b = binLo; b < binHi && b < nBins; b++) {
          if (column[b] > db) db = column[b];
        }
      }
      const ci = dbToColorIndex(db);
      const o = 4 * (y * width + x);
      out[o] = LUT[3 * ci];
      out[o + 1] = LUT[3 * ci + 1];
      out[o + 2] = LUT[3 * ci + 2];
      out[o + 3] = 255;
    }
  }
}
