// Client-side relevancy overlay built from the raw f32 score raster.
//
// Matches the service's own overlay rendering: a pixel is drawn only when
// its raw score is at least 0.5, colors follow a 4-stop ramp over scores
// renormalized between 0.5 and the view's peak, and visible pixels get
// alpha 128 scaled by the user opacity. Raster rows arrive bottom-up; the
// output is top-down for ImageData.

const RAMP: [number, number, number][] = [
  [0.05, 0.03, 0.35],
  [0.02, 0.60, 0.85],
  [0.95, 0.90, 0.10],
  [0.90, 0.10, 0.05],
];

export function rampColor(v: number): [number, number, number] {
  const t = Math.min(1, Math.max(0, v)) * (RAMP.length - 1);
  const i = Math.min(Math.floor(t), RAMP.length - 2);
  const f = t - i;
  const a = RAMP[i];
  const b = RAMP[i + 1];
  return [
    (1 - f) * a[0] + f * b[0],
    (1 - f) * a[1] + f * b[1],
    (1 - f) * a[2] + f * b[2],
  ];
}

// (score - 0.5) / (top - 0.5), clipped to [0,1]; all zero unless the peak
// clears the 0.5 relevance threshold.
export function displayValues(scores: Float32Array): Float32Array {
  let top = -Infinity;
  for (let i = 0; i < scores.length; i++) {
    const s = scores[i];
    if (Number.isFinite(s) && s > top) top = s;
  }
  const out = new Float32Array(scores.length);
  if (top <= 0.5) return out;
  const span = top - 0.5;
  for (let i = 0; i < scores.length; i++) {
    const v = (scores[i] - 0.5) / span;
    out[i] = v < 0 ? 0 : v > 1 ? 1 : v;
  }
  return out;
}

export function overlayPixels(
  scores: Float32Array,
  width: number,
  height: number,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (scores.length !== width * height) {
    throw new Error(
      `raster size ${scores.length} does not match ${width}x${height}`);
  }
  const op = Math.min(1, Math.max(0, opacity));
  const alphaOn = Math.round(128 * op);
  const display = displayValues(scores);
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let row = 0; row < height; row++) {
    const src = (height - 1 - row) * width; // flip: raster row 0 is the bottom
    const dst = row * width * 4;
    for (let col = 0; col < width; col++) {
      const s = scores[src + col];
      const o = dst + col * 4;
      if (!Number.isFinite(s) || s < 0.5) {
        out[o + 3] = 0;
        continue;
      }
      const [r, g, b] = rampColor(display[src + col]);
      out[o] = Math.round(r * 255);
      out[o + 1] = Math.round(g * 255);
      out[o + 2] = Math.round(b * 255);
      out[o + 3] = alphaOn;
    }
  }
  return out;
}
