/**
 * What-if orchestration: submit plan sets against a window and render the
 * side-by-side comparison. Requests are deduplicated by body (an identical
 * in-flight submission is not repeated) and responses arriving after a newer
 * submission are discarded.
 */

import type { ApiClient } from './api.js';
import { buildViewModel, renderHeatmap, type HeatmapViewModel } from './heatmap.js';
import type { ScaleBounds } from './colors.js';
import type { Direction, WhatifRequest, WhatifResponse, WindowResponse } from './types.js';

export class WhatifRunner {
  private latestToken = 0;
  private inflight = new Map<string, Promise<WhatifResponse>>();

  constructor(private readonly client: ApiClient) {}

  /**
   * Returns the response, or null when a newer submission superseded this
   * one while it was in flight. Identical concurrent bodies share one
   * request.
   */
  async run(body: WhatifRequest): Promise<WhatifResponse | null> {
    const key = JSON.stringify(body);
    const token = ++this.latestToken;
    let pending = this.inflight.get(key);
    if (!pending) {
      pending = this.client.whatif(body).finally(() => this.inflight.delete(key));
      this.inflight.set(key, pending);
    }
    const response = await pending;
    return token === this.latestToken ? response : null;
  }
}

export interface ComparisonPanels {
  label: string;
  viewModel: HeatmapViewModel;
}

/**
 * Build one panel per plan for the plan's own direction, sharing the
 * baseline's color bounds so the comparison reads on one scale.
 */
export function buildComparison(
  windowBody: WindowResponse,
  response: WhatifResponse,
  direction: Direction,
  directionIndex: number,
  scale?: ScaleBounds,
): ComparisonPanels[] {
  const panels: ComparisonPanels[] = [];
  let shared = scale;
  for (const plan of response.plans) {
    const vm = buildViewModel(
      direction,
      directionIndex,
      windowBody.seconds,
      plan.predicted_s,
      windowBody.start_time_bin,
      shared,
    );
    shared = shared ?? vm.scale;
    panels.push({ label: plan.label, viewModel: vm });
  }
  return panels;
}

export function renderComparison(
  container: HTMLElement,
  panels: ComparisonPanels[],
): void {
  container.textContent = '';
  for (const panel of panels) {
    const box = document.createElement('div');
    box.className = 'comparison-panel';
    const caption = document.createElement('div');
    caption.className = 'panel-label';
    caption.textContent = panel.label;
    box.appendChild(caption);
    const canvas = document.createElement('div');
    renderHeatmap(canvas, panel.viewModel);
    box.appendChild(canvas);
    container.appendChild(box);
  }
}

/**
 * Per-distance-bin CV delta table for the non-baseline plans; values are the
 * service's numbers verbatim.
 */
export function renderCvDeltas(
  container: HTMLElement,
  response: WhatifResponse,
  directionIndex: number,
): void {
  container.textContent = '';
  const table = document.createElement('table');
  table.className = 'cv-table';
  const header = document.createElement('tr');
  header.innerHTML = '<th>distance bin</th>' +
    response.plans.map((p) => `<th>${p.label} ΔCV</th>`).join('');
  table.appendChild(header);
  const nBins = response.plans[0]?.cv_delta.length ?? 0;
  for (let j = 0; j < nBins; j++) {
    const row = document.createElement('tr');
    const cells = response.plans.map((plan) => {
      const value = plan.cv_delta[j][directionIndex];
      return `<td data-value="${String(value)}">${value.toFixed(4)}</td>`;
    });
    row.innerHTML = `<td>${j}</td>` + cells.join('');
    table.appendChild(row);
  }
  container.appendChild(table);
}
