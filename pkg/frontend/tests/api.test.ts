import { describe, expect, it } from 'vitest';

import { CurationApi, rememberToken, storedToken } from '../src/api.js';
import type { FetchLike } from '../src/api.js';

class MemoryStorage implements Storage {
  private data = new Map<string, string>();
  get length(): number { return this.data.size; }
  clear(): void { this.data.clear(); }
  getItem(key: string): string | null { return this.data.get(key) ?? null; }
  key(index: number): string | null { return [...this.data.keys()][index] ?? null; }
  removeItem(key: string): void { this.data.delete(key); }
  setItem(key: string, value: string): void { this.data.set(key, value); }
}

function capturingFetch(): { calls: { url: string; init?: RequestInit }[]; fetch: FetchLike } {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetch: FetchLike = async (url, init) => {
    calls.push({ url, init });
    return new Response(JSON.stringify({ items: [] }), { status: 200 });
  };
  return { calls, fetch };
}

describe('auth header', () => {
  it('sends the bearer token on api calls', async () => {
    const { calls, fetch } = capturingFetch();
    const api = new CurationApi('', 'sekrit', fetch);
    await api.queue();
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers['Authorization']).toBe('Bearer sekrit');
  });

  it('omits the header when no token is set', async () => {
    const { calls, fetch } = capturingFetch();
    const api = new CurationApi('', '', fetch);
    await api.queue('pending');
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers['Authorization']).toBeUndefined();
    expect(calls[0].url).toBe('/api/queue?status=pending');
  });
});

describe('token persistence', () => {
  it('stores and clears the session token', () => {
    const storage = new MemoryStorage();
    rememberToken('abc', storage);
    expect(storedToken(storage)).toBe('abc');
    rememberToken('', storage);
    expect(storedToken(storage)).toBe('');
  });
});

describe('decision payload', () => {
  it('posts verdict and note as JSON', async () => {
    const { calls, fetch } = capturingFetch();
    const api = new CurationApi('', '', fetch);
    await api.decide('item-1', 'reject', 'misaligned texture');
    expect(calls[0].url).toBe('/api/items/item-1/decision');
    expect(calls[0].init?.method).toBe('POST');
    expect(JSON.parse(String(calls[0].init?.body))).toEqual(
      { verdict: 'reject', note: 'misaligned texture' });
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers['Content-Type']).toBe('application/json');
  });
});
