/** Color mapping for density and flow slices. Renderers return raw RGBA
 * buffers; the canvas wrapping happens at the paint site. */

// compact viridis-style lookup, linearly interpolated
const DENSITY_STOPS: [number, number, number][] = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export function densityColor(v: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, v)) * (DENSITY_STOPS.length - 1);
  const i = Math.min(DENSITY_STOPS.length - 2, Math.floor(x));
  const f = x - i;
  const a = DENSITY_STOPS[i];
  const b = DENSITY_STOPS[i + 1];
  return [
    Math.round(a[0] + (b[0] - a[0]) * f),
    Math.round(a[1] + (b[1] - a[1]) * f),
    Math.round(a[2] + (b[2] - a[2]) * f),
  ];
}

/** Density slice to RGBA; values are normalized [0,1]. */
export function densityRgba(values: Float32Array): Uint8ClampedArray {
  const rgba = new Uint8ClampedArray(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    const [r, g, b] = densityColor(values[i]);
    rgba[4 * i] = r;
    rgba[4 * i + 1] = g;
    rgba[4 * i + 2] = b;
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

/** Flow slice to RGBA: x, y, z components drive the red, green, and blue
 * channels around a neutral mid-gray; zero flow renders gray. */
export function flowRgba(
  fx: Float32Array,
  fy: Float32Array,
  fz: Float32Array,
  scale = 1.0,
): Uint8ClampedArray {
  const rgba = new Uint8ClampedArray(fx.length * 4);
  const squash = (v: number) => 127.5 + 127.5 * Math.max(-1, Math.min(1, v / scale));
  for (let i = 0; i < fx.length; i++) {
    rgba[4 * i] = squash(fx[i]);
    rgba[4 * i + 1] = squash(fy[i]);
    rgba[4 * i + 2] = squash(fz[i]);
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

/** Diverging heatmap color for similarity values in [-1, 1]. */
export function similarityColor(v: number): [number, number, number] {
  const x = Math.max(-1, Math.min(1, v));
  if (x >= 0) {
    // white toward deep blue
    return [Math.round(255 - 205 * x), Math.round(255 - 155 * x), 255];
  }
  return [255, Math.round(255 + 155 * x), Math.round(255 + 205 * x)];
}

/** Paint an RGBA buffer onto a canvas, scaling the element via CSS. */
export function paint(
  canvas: HTMLCanvasElement,
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
): void {
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return; // headless environments without 2-D support
  ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
}
