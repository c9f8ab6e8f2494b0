/**
 * Shapes of the service's JSON payloads. The console renders these values
 * verbatim; it never recomputes headways client-side.
 */

export type Direction = 'NB' | 'SB';

export const DIRECTIONS: Direction[] = ['NB', 'SB'];

export interface ModelInfo {
  dims: {
    n_distance_bins: number;
    n_directions: number;
    filters: number;
    lookback: number;
    horizon: number;
  };
  window: {
    lookback: number;
    horizon: number;
    terminal_bin_nb: number;
    terminal_bin_sb: number;
  };
  scaler: { h_min: number; h_max: number };
  delta_t_s: number;
  min_headway_s: number;
  digest: string;
  epoch: number;
  version: string;
}

export interface ReplicationsInfo {
  replications: number[];
  n_time_bins: number;
  lookback: number;
  horizon: number;
}

/** seconds[t][distanceBin][directionIndex] */
export interface WindowResponse {
  replication_id: number;
  anchor_time_bin: number;
  start_time_bin: number;
  seconds: number[][][];
}

export interface PredictRequest {
  replication?: number;
  anchor?: number;
  window?: number[][][];
  terminal_plans?: Partial<Record<Direction, number[]>>;
  rounds?: number;
}

export interface PredictResponse {
  anchor_time_bin: number | null;
  horizon_bins: number;
  horizon_minutes: number;
  seconds: number[][][];
}

export interface PlanPayload {
  direction: Direction;
  headways_s: number[];
  label: string;
}

export interface WhatifRequest {
  replication?: number;
  anchor?: number;
  window?: number[][][];
  plans: PlanPayload[];
  baseline_index: number;
}

export interface WhatifPlanResult {
  direction: Direction;
  label: string;
  headways_s: number[];
  predicted_s: number[][][];
  cv_per_bin: number[][];
  mean_per_bin_s: number[][];
  cv_delta: number[][];
  mean_delta_s: number[][];
}

export interface WhatifResponse {
  baseline_index: number;
  plans: WhatifPlanResult[];
  anchor_time_bin: number | null;
}
