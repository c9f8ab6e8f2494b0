import { describe, expect, it } from 'vitest';

import { defaultScaleBounds, headwayColor, percentile, scalePosition } from '../src/colors.js';
import { buildViewModel, extractPredictedValues, renderHeatmap } from '../src/heatmap.js';
import { predictedSeconds, windowSeconds, LOOKBACK, HORIZON, N_D } from './fakeService.js';

describe('color scale', () => {
  it('defaults to the 5th-95th percentile of the loaded grid', () => {
    const values = Array.from({ length: 101 }, (_, i) => i); // 0..100
    const bounds = defaultScaleBounds(values);
    expect(bounds.min).toBe(5);
    expect(bounds.max).toBe(95);
  });

  it('percentile interpolates', () => {
    expect(percentile([0, 10], 0.5)).toBe(5);
  });

  it('is monotone from green to red', () => {
    const bounds = { min: 100, max: 500 };
    const hueOf = (value: number) =>
      Number(headwayColor(value, bounds).match(/hsl\(([\d.]+)/)![1]);
    let previous = hueOf(100);
    for (const value of [200, 300, 400, 500, 900]) {
      const hue = hueOf(value);
      expect(hue).toBeLessThanOrEqual(previous);
      previous = hue;
    }
    expect(hueOf(100)).toBe(120); // green at the bottom of the range
    expect(hueOf(500)).toBe(0);   // red at the top
    expect(scalePosition(1e9, bounds)).toBe(1); // clamped
  });
});

describe('heatmap view model', () => {
  it('places the divider at the lookback boundary', () => {
    const vm = buildViewModel('NB', 0, windowSeconds(), predictedSeconds(0), 10);
    expect(vm.dividerIndex).toBe(LOOKBACK);
    expect(vm.values.length).toBe(LOOKBACK + HORIZON);
    expect(vm.timeLabels[0]).toBe('10');
  });

  it('keeps the service values untouched', () => {
    const window = windowSeconds();
    const vm = buildViewModel('SB', 1, window, null, 0);
    for (let t = 0; t < LOOKBACK; t++) {
      for (let j = 0; j < N_D; j++) {
        expect(vm.values[t][j]).toBe(window[t][j][1]);
      }
    }
  });
});

describe('heatmap rendering', () => {
  it('writes exact data-value strings for every cell', () => {
    const window = windowSeconds();
    const prediction = predictedSeconds(1);
    const vm = buildViewModel('NB', 0, window, prediction, 4);
    const host = document.createElement('div');
    renderHeatmap(host, vm);

    const cells = host.querySelectorAll<HTMLElement>('.cell');
    expect(cells.length).toBe((LOOKBACK + HORIZON) * N_D);
    for (const cell of cells) {
      const t = Number(cell.dataset.timeBin) - 4;
      const j = Number(cell.dataset.distanceBin);
      const source = t < LOOKBACK ? window[t][j][0] : prediction[t - LOOKBACK][j][0];
      expect(cell.dataset.value).toBe(String(source));
    }
  });

  it('marks prediction cells and exposes them for extraction', () => {
    const vm = buildViewModel('NB', 0, windowSeconds(), predictedSeconds(0), 0);
    const host = document.createElement('div');
    renderHeatmap(host, vm);
    const predicted = extractPredictedValues(host);
    expect(predicted.length).toBe(HORIZON * N_D);
    const flat: string[] = [];
    for (let j = 0; j < N_D; j++) {
      for (let t = 0; t < HORIZON; t++) {
        flat.push(String(predictedSeconds(0)[t][j][0]));
      }
    }
    expect(predicted).toEqual(flat);
  });

  it('re-rendering the same window is identical', () => {
    const vm = buildViewModel('NB', 0, windowSeconds(), null, 0);
    const a = document.createElement('div');
    const b = document.createElement('div');
    renderHeatmap(a, vm);
    renderHeatmap(b, vm);
    expect(a.innerHTML).toBe(b.innerHTML);
  });
});
