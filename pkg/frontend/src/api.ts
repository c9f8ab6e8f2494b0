/**
 * Thin typed client for the headway-lab HTTP service. The fetch function is
 * injectable so tests can run against a scripted service.
 */

import type {
  ModelInfo,
  PredictRequest,
  PredictResponse,
  ReplicationsInfo,
  WhatifRequest,
  WhatifResponse,
  WindowResponse,
} from './types.js';

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`service responded ${status}: ${JSON.stringify(detail)}`);
    this.name = 'ServiceError';
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON error bodies still surface the status code
    }
    if (!response.ok) {
      throw new ServiceError(response.status, (body as { detail?: unknown })?.detail ?? body);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
  }

  getModel(): Promise<ModelInfo> {
    return this.request<ModelInfo>('/model');
  }

  getReplications(): Promise<ReplicationsInfo> {
    return this.request<ReplicationsInfo>('/replications');
  }

  getWindow(replication: number, anchor: number): Promise<WindowResponse> {
    return this.request<WindowResponse>(`/replications/${replication}/window?anchor=${anchor}`);
  }

  predict(body: PredictRequest): Promise<PredictResponse> {
    return this.post<PredictResponse>('/predict', body);
  }

  whatif(body: WhatifRequest): Promise<WhatifResponse> {
    return this.post<WhatifResponse>('/whatif', body);
  }
}
