/**
 * Green-to-red color scale for headway magnitudes. The scale is monotone in
 * the headway value over a [min, max] seconds range; the default range is
 * the 5th-95th percentile of the loaded grid so one outlier cannot wash out
 * the gradient.
 */

export function percentile(values: number[], p: number): number {
  if (values.length === 0) {
    throw new Error('percentile of empty list');
  }
  const sorted = [...values].sort((a, b) => a - b);
  const pos = (sorted.length - 1) * p;
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  if (lo === hi) return sorted[lo];
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo);
}

export interface ScaleBounds {
  min: number;
  max: number;
}

export function defaultScaleBounds(values: number[]): ScaleBounds {
  const min = percentile(values, 0.05);
  const max = percentile(values, 0.95);
  return max > min ? { min, max } : { min, max: min + 1 };
}

/** Normalized position of a value on the scale, clamped to [0, 1]. */
export function scalePosition(value: number, bounds: ScaleBounds): number {
  const t = (value - bounds.min) / (bounds.max - bounds.min);
  return Math.min(1, Math.max(0, t));
}

/** hsl() color: hue 120 (green) at min sliding monotonically to 0 (red). */
export function headwayColor(value: number, bounds: ScaleBounds): string {
  const t = scalePosition(value, bounds);
  const hue = 120 * (1 - t);
  return `hsl(${hue.toFixed(1)}, 72%, 44%)`;
}
