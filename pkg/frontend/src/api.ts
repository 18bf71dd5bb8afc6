// Thin typed client over the curation HTTP API. Every mutation the UI can
// make goes through here; the UI itself holds no write path.

import type { AugmentedRecord, ItemDetail, ItemStatus, QueueSummary } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const TOKEN_KEY = 'nmid-review-token';

export function storedToken(storage: Storage = sessionStorage): string {
  return storage.getItem(TOKEN_KEY) ?? '';
}

export function rememberToken(token: string, storage: Storage = sessionStorage): void {
  if (token) storage.setItem(TOKEN_KEY, token);
  else storage.removeItem(TOKEN_KEY);
}

export class CurationApi {
  constructor(
    private baseUrl: string = '',
    private token: string = '',
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = {
      ...(init.headers as Record<string, string> | undefined),
    };
    if (init.body) headers['Content-Type'] = 'application/json';
    if (this.token) headers['Authorization'] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(this.baseUrl + path, { ...init, headers });
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const message = (body as { error?: string }).error ?? `HTTP ${resp.status}`;
      throw new ApiError(resp.status, message);
    }
    return body as T;
  }

  async queue(status?: ItemStatus): Promise<QueueSummary[]> {
    const suffix = status ? `?status=${status}` : '';
    const body = await this.request<{ items: QueueSummary[] }>(`/api/queue${suffix}`);
    return body.items;
  }

  item(id: string): Promise<ItemDetail> {
    return this.request<ItemDetail>(`/api/items/${id}`);
  }

  decide(id: string, verdict: 'accept' | 'reject', note = ''): Promise<ItemDetail> {
    return this.request<ItemDetail>(`/api/items/${id}/decision`, {
      method: 'POST',
      body: JSON.stringify({ verdict, note }),
    });
  }

  async augmentedManifest(): Promise<AugmentedRecord[]> {
    const body = await this.request<{ records: AugmentedRecord[] }>(
      '/api/manifest/augmented',
    );
    return body.records;
  }
}
