/**
 * Heatmap view model and DOM renderer.
 *
 * One panel per direction: rows are distance bins with bin 0 (the
 * direction's departure terminal) at the top, columns are time bins, and a
 * divider marks the history/prediction boundary at the lookback edge. Every
 * cell carries its exact numeric value in data-value; color is the only
 * derived quantity.
 */

import { defaultScaleBounds, headwayColor, type ScaleBounds } from './colors.js';
import type { Direction } from './types.js';

export interface HeatmapViewModel {
  direction: Direction;
  directionIndex: number;
  startTimeBin: number;
  timeLabels: string[];
  nDistanceBins: number;
  /** values[t][j] seconds; history columns first, then prediction columns */
  values: number[][];
  /** column count that belongs to history; the divider sits after it */
  dividerIndex: number;
  scale: ScaleBounds;
}

/**
 * Combine a history block and an optional prediction block (both
 * seconds[t][j][k]) into one panel for the given direction.
 */
export function buildViewModel(
  direction: Direction,
  directionIndex: number,
  history: number[][][],
  prediction: number[][][] | null,
  startTimeBin: number,
  scale?: ScaleBounds,
): HeatmapViewModel {
  const slice = (block: number[][][]): number[][] =>
    block.map((frame) => frame.map((byDirection) => byDirection[directionIndex]));
  const historyValues = slice(history);
  const predictionValues = prediction ? slice(prediction) : [];
  const values = historyValues.concat(predictionValues);
  const nDistanceBins = values.length > 0 ? values[0].length : 0;
  const bounds = scale ?? defaultScaleBounds(historyValues.flat());
  return {
    direction,
    directionIndex,
    startTimeBin,
    timeLabels: values.map((_, i) => String(startTimeBin + i)),
    nDistanceBins,
    values,
    dividerIndex: historyValues.length,
    scale: bounds,
  };
}

/**
 * Render the panel as a CSS grid of cells. data-value holds the exact
 * String() of the service's number so automated checks can compare the DOM
 * against the raw response.
 */
export function renderHeatmap(container: HTMLElement, vm: HeatmapViewModel): void {
  container.textContent = '';
  container.classList.add('heatmap');

  const title = document.createElement('div');
  title.className = 'heatmap-title';
  title.textContent = `${vm.direction} (bin 0 = departure terminal)`;
  container.appendChild(title);

  const grid = document.createElement('div');
  grid.className = 'heatmap-grid';
  grid.style.display = 'grid';
  grid.style.gridTemplateColumns = `repeat(${vm.values.length}, 10px)`;
  for (let j = 0; j < vm.nDistanceBins; j++) {
    for (let t = 0; t < vm.values.length; t++) {
      const cell = document.createElement('div');
      const value = vm.values[t][j];
      cell.className = 'cell';
      if (t < vm.dividerIndex) {
        cell.classList.add('history');
      } else {
        cell.classList.add('predicted');
      }
      if (t === vm.dividerIndex - 1) {
        cell.classList.add('divider-right');
      }
      cell.dataset.value = String(value);
      cell.dataset.timeBin = String(vm.startTimeBin + t);
      cell.dataset.distanceBin = String(j);
      cell.title = `t=${vm.startTimeBin + t} bin=${j}: ${value}s`;
      cell.style.backgroundColor = headwayColor(value, vm.scale);
      grid.appendChild(cell);
    }
  }
  container.appendChild(grid);
}

/** data-value strings of the prediction cells, row-major [j][t]. */
export function extractPredictedValues(container: HTMLElement): string[] {
  return Array.from(container.querySelectorAll<HTMLElement>('.cell.predicted')).map(
    (cell) => cell.dataset.value ?? '',
  );
}
