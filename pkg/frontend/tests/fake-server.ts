// In-memory stand-in for the curation API with the same semantics the
// Python server implements: decide-once (409 after), read-your-writes,
// augmented manifest = train records + accepted synthetics with the
// source item's label.

import type { FetchLike } from '../src/api.js';
import type { AugmentedRecord, ItemDetail } from '../src/types.js';

interface ServerItem extends ItemDetail {
  synthetic_paths: string[];
}

export class FakeServer {
  items = new Map<string, ServerItem>();
  trainRecords: AugmentedRecord[] = [];
  requests: { method: string; path: string }[] = [];
  failNext: { status: number; error: string } | null = null;

  seedItem(id: string, label: string, synthetics: string[]): void {
    this.items.set(id, {
      id,
      label,
      status: 'pending',
      enqueued_ts: this.items.size,
      thumbnail: `/assets/thumb-${id}`,
      source_image: { path: `/data/${id}.png`, asset: `/assets/src-${id}` },
      transcript: [
        { prompt_id: 1, question: '**Basics** - ?', answer: `about ${id}` },
      ],
      synthetics: synthetics.map((p) => ({ path: p, asset: `/assets/${p}` })),
      decision: null,
      synthetic_paths: synthetics,
    });
  }

  /** Decide server-side, as if from another tab. */
  decideOutOfBand(id: string, verdict: 'accept' | 'reject'): void {
    const item = this.items.get(id);
    if (!item || item.status !== 'pending') throw new Error('bad out-of-band decide');
    item.status = verdict === 'accept' ? 'accepted' : 'rejected';
    item.decision = { verdict, note: 'other tab', ts: 1 };
  }

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    });
  }

  fetch: FetchLike = async (input, init) => {
    const method = init?.method ?? 'GET';
    const url = new URL(input, 'http://fake');
    const path = url.pathname;
    this.requests.push({ method, path });
    if (this.failNext) {
      const { status, error } = this.failNext;
      this.failNext = null;
      return this.json(status, { error });
    }

    if (method === 'GET' && path === '/api/queue') {
      const status = url.searchParams.get('status');
      const items = [...this.items.values()]
        .filter((it) => !status || it.status === status)
        .map(({ synthetic_paths: _unused, ...summary }) => ({
          id: summary.id,
          label: summary.label,
          status: summary.status,
          enqueued_ts: summary.enqueued_ts,
          thumbnail: summary.thumbnail,
        }));
      return this.json(200, { items });
    }

    const itemMatch = path.match(/^\/api\/items\/([^/]+)$/);
    if (method === 'GET' && itemMatch) {
      const item = this.items.get(itemMatch[1]);
      if (!item) return this.json(404, { error: 'unknown item' });
      return this.json(200, item);
    }

    const decideMatch = path.match(/^\/api\/items\/([^/]+)\/decision$/);
    if (method === 'POST' && decideMatch) {
      const item = this.items.get(decideMatch[1]);
      if (!item) return this.json(404, { error: 'unknown item' });
      if (item.status !== 'pending') {
        return this.json(409, { error: 'item already decided' });
      }
      const body = JSON.parse(String(init?.body ?? '{}')) as {
        verdict: 'accept' | 'reject';
        note?: string;
      };
      if (body.verdict !== 'accept' && body.verdict !== 'reject') {
        return this.json(400, { error: 'verdict must be accept or reject' });
      }
      item.status = body.verdict === 'accept' ? 'accepted' : 'rejected';
      item.decision = { verdict: body.verdict, note: body.note ?? '', ts: 2 };
      return this.json(200, item);
    }

    if (method === 'GET' && path === '/api/manifest/augmented') {
      const records: AugmentedRecord[] = [...this.trainRecords];
      for (const item of this.items.values()) {
        if (item.status !== 'accepted') continue;
        for (const synth of item.synthetic_paths) {
          records.push({
            id: `synthetic/${item.id}/${synth}`,
            path: synth,
            label: item.label,
            split: 'train',
            hardness: null,
            provenance: item.id,
          });
        }
      }
      return this.json(200, { records });
    }

    return this.json(404, { error: 'no such route' });
  };
}
