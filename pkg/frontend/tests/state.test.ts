import { beforeEach, describe, expect, it } from 'vitest';

import { ApiError, CurationApi } from '../src/api.js';
import { QueueStore, acceptedCountsByLabel } from '../src/state.js';
import { FakeServer } from './fake-server.js';

let server: FakeServer;
let api: CurationApi;
let store: QueueStore;

beforeEach(() => {
  server = new FakeServer();
  server.seedItem('item-a', 'stripes', ['synth-a1.png', 'synth-a2.png']);
  server.seedItem('item-b', 'rings', ['synth-b1.png']);
  server.seedItem('item-c', 'dots', ['synth-c1.png']);
  api = new CurationApi('', '', server.fetch);
  store = new QueueStore(api, 2);
});

describe('queue listing', () => {
  it('shows pending items by default', async () => {
    await store.refresh();
    const snap = store.snapshot();
    expect(snap.filter).toBe('pending');
    expect(snap.totalFiltered).toBe(3);
    expect(snap.pageItems.map((i) => i.id)).toEqual(['item-a', 'item-b']);
  });

  it('paginates beyond the page size', async () => {
    await store.refresh();
    store.setPage(1);
    expect(store.snapshot().pageItems.map((i) => i.id)).toEqual(['item-c']);
  });

  it('filters by status after decisions', async () => {
    await store.refresh();
    await store.decide('item-a', 'accept');
    store.setFilter('accepted');
    expect(store.snapshot().pageItems.map((i) => i.id)).toEqual(['item-a']);
    store.setFilter('pending');
    expect(store.snapshot().pageItems.map((i) => i.id)).toEqual(
      ['item-b', 'item-c']);
  });

  it('reports an empty queue explicitly', async () => {
    server.items.clear();
    await store.refresh();
    const snap = store.snapshot();
    expect(snap.busy).toBe(false);
    expect(snap.totalFiltered).toBe(0);
    expect(snap.pageItems).toEqual([]);
  });
});

describe('criterion 13: accept/reject round trip through the UI store', () => {
  it('accepting removes the item from the pending filter without a reload', async () => {
    await store.refresh();
    const committed = await store.decide('item-a', 'accept', 'looks right');
    expect(committed).toBe(true);
    const pending = store.snapshot().pageItems.map((i) => i.id);
    expect(pending).not.toContain('item-a');
    // no extra GET /api/queue happened: the store reconciled from the 2xx body
    const queueCalls = server.requests.filter(
      (r) => r.method === 'GET' && r.path === '/api/queue');
    expect(queueCalls.length).toBe(1);
  });

  it('augmented manifest contains exactly the accepted synthetics with the inherited label', async () => {
    await store.refresh();
    await store.decide('item-a', 'accept');
    await store.decide('item-b', 'reject');
    const records = await api.augmentedManifest();
    const added = records.filter((r) => r.provenance !== null);
    expect(added).toHaveLength(2);
    expect(added.map((r) => r.path).sort()).toEqual(
      ['synth-a1.png', 'synth-a2.png']);
    expect(new Set(added.map((r) => r.label))).toEqual(new Set(['stripes']));
    expect(added.every((r) => r.provenance === 'item-a')).toBe(true);
    const counts = acceptedCountsByLabel(records);
    expect(counts.get('stripes')).toBe(2);
    expect(counts.has('rings')).toBe(false);
  });

  it('double-decide from a second tab yields 409 and the UI rolls back', async () => {
    await store.refresh();
    await store.open('item-b');
    server.decideOutOfBand('item-b', 'accept'); // the other tab wins
    const committed = await store.decide('item-b', 'reject');
    expect(committed).toBe(false);
    const snap = store.snapshot();
    // rollback happened, then reconciliation fetched the server's verdict
    expect(snap.notice).toMatch(/already decided|Conflict/i);
    expect(snap.openItem?.status).toBe('accepted');
    const listed = [...server.items.values()].find((i) => i.id === 'item-b');
    expect(listed?.status).toBe('accepted');
  });

  it('non-409 failures roll back to pending', async () => {
    await store.refresh();
    server.failNext = { status: 500, error: 'backend exploded' };
    const committed = await store.decide('item-c', 'accept');
    expect(committed).toBe(false);
    store.setPage(1); // item-c lives on the second page at pageSize 2
    const item = store.snapshot().pageItems.find((i) => i.id === 'item-c');
    expect(item?.status).toBe('pending');
    expect(store.snapshot().notice).toMatch(/exploded/);
  });
});

describe('detail navigation', () => {
  it('open exposes transcript and synthetics', async () => {
    await store.refresh();
    await store.open('item-a');
    const open = store.snapshot().openItem;
    expect(open?.transcript[0].question).toContain('**Basics**');
    expect(open?.synthetics).toHaveLength(2);
  });

  it('openNext cycles within the current filter', async () => {
    await store.refresh();
    await store.open('item-a');
    await store.openNext();
    expect(store.snapshot().openItem?.id).toBe('item-b');
    await store.openNext();
    expect(store.snapshot().openItem?.id).toBe('item-c');
    await store.openNext();
    expect(store.snapshot().openItem?.id).toBe('item-a');
  });

  it('client state never contradicts a 2xx response', async () => {
    await store.refresh();
    await store.open('item-a');
    await store.decide('item-a', 'accept');
    const open = store.snapshot().openItem;
    const serverItem = server.items.get('item-a');
    expect(open?.status).toBe(serverItem?.status);
    expect(open?.decision?.verdict).toBe('accept');
  });
});

describe('api client errors', () => {
  it('raises ApiError with server message', async () => {
    await expect(api.item('missing')).rejects.toThrowError(ApiError);
    await expect(api.item('missing')).rejects.toMatchObject({ status: 404 });
  });
});
