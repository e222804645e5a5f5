import { afterEach, describe, expect, it, vi } from 'vitest';

import {
  ApiError,
  checkHealth,
  fetchBenchmark,
  fetchNextPair,
  fetchProgress,
  submitAnnotation,
} from '../dist/api.js';

const BASE = 'http://service.test';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'content-type': 'application/json' },
  });
}

function stubFetch(response: Response | Error) {
  const mock = vi.fn(async () => {
    if (response instanceof Error) throw response;
    return response.clone(); // a Response body is single-use; hand out copies
  });
  vi.stubGlobal('fetch', mock);
  return mock;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('fetchNextPair', () => {
  it('requests the annotator queue and unwraps the pair', async () => {
    const pair = { pair_id: 'p1', task: 't', instruction: 'i', original: 'o', left: 'l', right: 'r' };
    const mock = stubFetch(jsonResponse({ pair }));
    await expect(fetchNextPair(BASE, 'expert 1')).resolves.toEqual(pair);
    expect(mock).toHaveBeenCalledWith(`${BASE}/pairs/next?annotator=expert%201`, undefined);
  });

  it('returns null when the queue is exhausted', async () => {
    stubFetch(jsonResponse({ pair: null }));
    await expect(fetchNextPair(BASE, 'expert-1')).resolves.toBeNull();
  });
});

describe('submitAnnotation', () => {
  it('posts the payload as JSON', async () => {
    const mock = stubFetch(jsonResponse({ status: 'ok', pair_id: 'p1', annotator_id: 'a' }));
    const submission = {
      pair_id: 'p1',
      annotator_id: 'a',
      choices: { IF: 'PreferA', VQ: 'BothGood', VC: 'PreferA', Overall: 'PreferA' },
    } as Parameters<typeof submitAnnotation>[1];
    const result = await submitAnnotation(BASE, submission);
    expect(result.status).toBe('ok');
    const [url, init] = mock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe(`${BASE}/annotations`);
    expect(init.method).toBe('POST');
    expect(JSON.parse(String(init.body))).toEqual(submission);
  });

  it('surfaces service rejections as ApiError with the detail text', async () => {
    stubFetch(jsonResponse({ detail: 'choices must cover exactly IF, VQ, VC, Overall' }, 400));
    const submission = {
      pair_id: 'p1',
      annotator_id: 'a',
      choices: { IF: 'PreferA', VQ: 'BothGood', VC: 'PreferA', Overall: 'PreferA' },
    } as Parameters<typeof submitAnnotation>[1];
    const failure = submitAnnotation(BASE, submission);
    await expect(failure).rejects.toBeInstanceOf(ApiError);
    await expect(submitAnnotation(BASE, submission)).rejects.toThrow(/choices must cover/);
  });
});

describe('error handling', () => {
  it('keeps the HTTP status on the error object', async () => {
    stubFetch(jsonResponse({ detail: 'unknown export mode' }, 400));
    const err = await fetchBenchmark(BASE, 'bogus').catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(400);
    expect((err as ApiError).detail).toBe('unknown export mode');
  });

  it('tolerates non-JSON error bodies', async () => {
    stubFetch(new Response('gateway exploded', { status: 502, statusText: 'Bad Gateway' }));
    const err = await fetchProgress(BASE).catch((e: unknown) => e);
    expect((err as ApiError).detail).toBe('Bad Gateway');
  });

  it('lets network failures propagate for the retry banner', async () => {
    stubFetch(new TypeError('fetch failed'));
    await expect(fetchNextPair(BASE, 'a')).rejects.toThrow(/fetch failed/);
  });

  it('health check folds failures into false', async () => {
    stubFetch(new TypeError('refused'));
    await expect(checkHealth(BASE)).resolves.toBe(false);
  });
});

describe('fetchBenchmark', () => {
  it('passes the export mode through as a query parameter', async () => {
    const mock = stubFetch(jsonResponse({ pairs: [] }));
    await expect(fetchBenchmark(BASE, 'unanimous')).resolves.toEqual([]);
    expect(mock).toHaveBeenCalledWith(`${BASE}/export/benchmark?mode=unanimous`, undefined);
  });
});
