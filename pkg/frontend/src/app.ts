/**
 * Page wiring for the dispatcher console: pick a replication and anchor,
 * view the history heatmap, edit terminal plans per future minute, and
 * compare predicted propagation across plans.
 */

import { ApiClient, ServiceError } from './api.js';
import { defaultScaleBounds, type ScaleBounds } from './colors.js';
import { buildViewModel, renderHeatmap } from './heatmap.js';
import {
  applyEven,
  applyHolding,
  canSubmit,
  makeEditor,
  setEntry,
  toPlanPayload,
  validate,
  type PlanEditorState,
} from './planEditor.js';
import type { Direction, ModelInfo, WindowResponse } from './types.js';
import { WhatifRunner, buildComparison, renderCvDeltas, renderComparison } from './whatif.js';

interface ConsoleState {
  client: ApiClient;
  runner: WhatifRunner;
  model: ModelInfo | null;
  windowBody: WindowResponse | null;
  editor: PlanEditorState | null;
  direction: Direction;
  scale: ScaleBounds | null;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(message: string, retry?: () => void): void {
  const banner = el<HTMLDivElement>('banner');
  banner.textContent = message;
  banner.style.display = 'block';
  if (retry) {
    const button = document.createElement('button');
    button.textContent = 'retry';
    button.onclick = () => {
      banner.style.display = 'none';
      retry();
    };
    banner.appendChild(button);
  }
}

function renderEditor(state: ConsoleState): void {
  const editor = state.editor;
  if (!editor) return;
  const host = el<HTMLDivElement>('plan-entries');
  host.textContent = '';
  const issues = new Map(validate(editor).map((issue) => [issue.index, issue]));
  editor.entries.forEach((value, index) => {
    const input = document.createElement('input');
    input.type = 'number';
    input.value = String(value);
    input.dataset.index = String(index);
    input.className = issues.has(index) ? 'entry invalid' : 'entry';
    input.onchange = () => {
      state.editor = setEntry(editor, index, Number(input.value));
      renderEditor(state);
    };
    host.appendChild(input);
  });
  const messages = el<HTMLDivElement>('plan-messages');
  messages.textContent = Array.from(issues.values()).map((i) => i.message).join('; ');
  el<HTMLButtonElement>('run-whatif').disabled = !canSubmit(editor);
}

async function loadWindow(state: ConsoleState): Promise<void> {
  const replication = Number(el<HTMLInputElement>('replication').value);
  const anchor = Number(el<HTMLInputElement>('anchor').value);
  try {
    const body = await state.client.getWindow(replication, anchor);
    state.windowBody = body;
    const directionIndex = state.direction === 'NB' ? 0 : 1;
    state.scale = defaultScaleBounds(
      body.seconds.flat().map((byDirection) => byDirection[directionIndex]),
    );
    const vm = buildViewModel(state.direction, directionIndex, body.seconds, null,
                              body.start_time_bin, state.scale);
    renderHeatmap(el('history-heatmap'), vm);
    if (state.model && !state.editor) {
      state.editor = makeEditor(state.direction, state.model.window.horizon,
                                state.model.min_headway_s);
      renderEditor(state);
    }
  } catch (err) {
    if (err instanceof ServiceError && err.status === 404) {
      showBanner(`replication ${replication} not found`);
    } else {
      showBanner('service unreachable', () => void loadWindow(state));
    }
  }
}

async function runWhatif(state: ConsoleState): Promise<void> {
  const { editor, windowBody, model } = state;
  if (!editor || !windowBody || !model || !canSubmit(editor)) return;
  const directionIndex = editor.direction === 'NB' ? 0 : 1;
  const baseline = toPlanPayload(
    { ...editor, entries: editor.entries.map(() => editor.entries[0]) }, 'baseline');
  const adjusted = toPlanPayload(editor, editor.label);
  try {
    const response = await state.runner.run({
      replication: windowBody.replication_id,
      anchor: windowBody.anchor_time_bin,
      plans: [baseline, adjusted],
      baseline_index: 0,
    });
    if (!response) return; // superseded by a newer submission
    const panels = buildComparison(windowBody, response, editor.direction,
                                   directionIndex, state.scale ?? undefined);
    renderComparison(el('comparison'), panels);
    renderCvDeltas(el('cv-deltas'), response, directionIndex);
  } catch (err) {
    if (err instanceof ServiceError && err.status === 422) {
      showBanner(`plan rejected: ${JSON.stringify(err.detail)}`);
      renderEditor(state);
    } else {
      showBanner('what-if request failed', () => void runWhatif(state));
    }
  }
}

export async function startConsole(baseUrl: string): Promise<ConsoleState> {
  const client = new ApiClient(baseUrl);
  const state: ConsoleState = {
    client,
    runner: new WhatifRunner(client),
    model: null,
    windowBody: null,
    editor: null,
    direction: 'NB',
    scale: null,
  };
  try {
    state.model = await client.getModel();
    const reps = await client.getReplications();
    el<HTMLInputElement>('replication').value = String(reps.replications[0] ?? 0);
    el<HTMLInputElement>('anchor').value = String(reps.lookback);
  } catch {
    showBanner('service unreachable', () => void startConsole(baseUrl));
    return state;
  }

  el<HTMLButtonElement>('load-window').onclick = () => void loadWindow(state);
  el<HTMLButtonElement>('run-whatif').onclick = () => void runWhatif(state);
  el<HTMLSelectElement>('direction').onchange = (event) => {
    state.direction = (event.target as HTMLSelectElement).value as Direction;
    state.editor = state.editor
      ? makeEditor(state.direction, state.editor.entries.length, state.editor.minHeadway)
      : null;
    if (state.windowBody) void loadWindow(state);
  };
  el<HTMLButtonElement>('preset-even').onclick = () => {
    if (!state.editor) return;
    const target = Number(el<HTMLInputElement>('even-target').value);
    state.editor = applyEven(state.editor, target);
    renderEditor(state);
  };
  el<HTMLButtonElement>('preset-holding').onclick = () => {
    if (!state.editor || !state.windowBody || !state.model) return;
    const directionIndex = state.direction === 'NB' ? 0 : 1;
    const terminalBin = directionIndex === 0
      ? state.model.window.terminal_bin_nb
      : state.model.window.terminal_bin_sb;
    const observed = state.windowBody.seconds.map((frame) => frame[terminalBin][directionIndex]);
    state.editor = applyHolding(state.editor, observed);
    renderEditor(state);
  };
  return state;
}

declare global {
  interface Window {
    headwayConsole?: Promise<ConsoleState>;
  }
}

if (typeof document !== 'undefined' && document.getElementById('console-root')) {
  window.headwayConsole = startConsole(
    (document.getElementById('console-root') as HTMLElement).dataset.serviceUrl ?? '',
  );
}
