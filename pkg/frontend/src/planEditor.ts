/**
 * Terminal plan editor state: one headway entry per future time bin for one
 * direction, preset fills, and validation against the service-reported
 * minimum safe headway. Submission stays disabled while any entry violates
 * the minimum; the service re-validates anyway (422) as the backstop.
 */

import type { Direction, PlanPayload } from './types.js';

export type Preset = 'even' | 'holding' | 'custom';

export interface PlanEditorState {
  direction: Direction;
  entries: number[];
  preset: Preset;
  minHeadway: number;
  label: string;
}

export interface EntryIssue {
  index: number;
  value: number;
  message: string;
}

export function makeEditor(
  direction: Direction,
  horizonBins: number,
  minHeadway: number,
  initial?: number[],
): PlanEditorState {
  const entries = initial ? [...initial] : new Array<number>(horizonBins).fill(minHeadway);
  return { direction, entries, preset: 'custom', minHeadway, label: 'custom' };
}

export function applyEven(state: PlanEditorState, target: number): PlanEditorState {
  return {
    ...state,
    entries: state.entries.map(() => target),
    preset: 'even',
    label: 'even',
  };
}

/**
 * Holding preset: project the observed terminal headways over the horizon
 * (cycling them), then lift each entry to the projection's mean and to the
 * minimum headway. Holding only ever delays a departure, so no entry drops
 * below its projected value.
 */
export function applyHolding(state: PlanEditorState, observed: number[]): PlanEditorState {
  if (observed.length === 0) {
    throw new Error('holding preset needs observed terminal headways');
  }
  const projection = state.entries.map((_, i) => observed[i % observed.length]);
  const mean = projection.reduce((a, b) => a + b, 0) / projection.length;
  const entries = projection.map((p) => Math.max(p, mean, state.minHeadway));
  return { ...state, entries, preset: 'holding', label: 'holding' };
}

export function setEntry(state: PlanEditorState, index: number, value: number): PlanEditorState {
  const entries = [...state.entries];
  entries[index] = value;
  return { ...state, entries, preset: 'custom', label: 'custom' };
}

export function validate(state: PlanEditorState): EntryIssue[] {
  const issues: EntryIssue[] = [];
  state.entries.forEach((value, index) => {
    if (!Number.isFinite(value)) {
      issues.push({ index, value, message: `entry ${index} is not a number` });
    } else if (value < state.minHeadway) {
      issues.push({
        index,
        value,
        message: `entry ${index} (${value}s) is below the minimum headway ${state.minHeadway}s`,
      });
    }
  });
  return issues;
}

export function canSubmit(state: PlanEditorState): boolean {
  return state.entries.length > 0 && validate(state).length === 0;
}

export function toPlanPayload(state: PlanEditorState, label?: string): PlanPayload {
  return {
    direction: state.direction,
    headways_s: [...state.entries],
    label: label ?? state.label,
  };
}
