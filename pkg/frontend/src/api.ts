/**
 * Typed client for the annotation campaign HTTP API. Every function takes
 * the service base URL explicitly, so the same module drives the browser
 * UI (same-origin or proxied) and the node integration tests.
 */

import type { PairPayload, Submission } from './state.js';

export interface SubmitResponse {
  status: string;
  pair_id: string;
  annotator_id: string;
}

export interface BenchmarkPair {
  pair_id: string;
  task: string;
  instruction: string;
  original: unknown;
  candidate_a: unknown;
  candidate_b: unknown;
  human_preference: 'A' | 'B';
}

export interface Progress {
  total_pairs: number;
  annotated_pairs: number;
  total_records: number;
  active_leases: number;
  per_annotator: Record<string, number>;
  complete: boolean;
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`service answered ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(`${base}${path}`, init);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body.detail !== undefined) {
        detail = typeof body.detail === 'string' ? body.detail : JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

/** Next unannotated pair for this annotator, or null when the queue is done. */
export async function fetchNextPair(base: string, annotator: string): Promise<PairPayload | null> {
  const body = await request<{ pair: PairPayload | null }>(
    base,
    `/pairs/next?annotator=${encodeURIComponent(annotator)}`,
  );
  return body.pair;
}

export async function submitAnnotation(base: string, submission: Submission): Promise<SubmitResponse> {
  return request<SubmitResponse>(base, '/annotations', {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(submission),
  });
}

export async function fetchBenchmark(base: string, mode: string): Promise<BenchmarkPair[]> {
  const body = await request<{ pairs: BenchmarkPair[] }>(
    base,
    `/export/benchmark?mode=${encodeURIComponent(mode)}`,
  );
  return body.pairs;
}

export async function fetchProgress(base: string): Promise<Progress> {
  return request<Progress>(base, '/progress');
}

export async function checkHealth(base: string): Promise<boolean> {
  try {
    const body = await request<{ status: string }>(base, '/health');
    return body.status === 'ok';
  } catch {
    return false;
  }
}
