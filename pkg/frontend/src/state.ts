// Queue store: filter + pagination over the server's queue, optimistic
// accept/reject with rollback, and reconciliation after every mutation so
// client state never contradicts a 2xx server response.

import { ApiError, CurationApi } from './api.js';
import type { ItemDetail, ItemStatus, QueueSummary } from './types.js';

export type Filter = ItemStatus | 'all';

export interface StoreSnapshot {
  filter: Filter;
  page: number;
  pageSize: number;
  pageItems: QueueSummary[];
  totalFiltered: number;
  openItem: ItemDetail | null;
  notice: string | null;
  busy: boolean;
}

type Listener = (snap: StoreSnapshot) => void;

export class QueueStore {
  private items: QueueSummary[] = [];
  private filter: Filter = 'pending';
  private page = 0;
  private openItem: ItemDetail | null = null;
  private notice: string | null = null;
  private busy = false;
  private listeners: Listener[] = [];

  constructor(private api: CurationApi, readonly pageSize: number = 25) {}

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const listener of this.listeners) listener(snap);
  }

  snapshot(): StoreSnapshot {
    const filtered = this.filteredItems();
    const start = this.page * this.pageSize;
    return {
      filter: this.filter,
      page: this.page,
      pageSize: this.pageSize,
      pageItems: filtered.slice(start, start + this.pageSize),
      totalFiltered: filtered.length,
      openItem: this.openItem,
      notice: this.notice,
      busy: this.busy,
    };
  }

  private filteredItems(): QueueSummary[] {
    if (this.filter === 'all') return this.items;
    return this.items.filter((it) => it.status === this.filter);
  }

  async refresh(): Promise<void> {
    this.busy = true;
    this.emit();
    try {
      this.items = await this.api.queue();
      const pages = Math.max(1, Math.ceil(this.filteredItems().length / this.pageSize));
      if (this.page >= pages) this.page = pages - 1;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  setFilter(filter: Filter): void {
    this.filter = filter;
    this.page = 0;
    this.emit();
  }

  setPage(page: number): void {
    const pages = Math.max(1, Math.ceil(this.filteredItems().length / this.pageSize));
    this.page = Math.min(Math.max(0, page), pages - 1);
    this.emit();
  }

  clearNotice(): void {
    this.notice = null;
    this.emit();
  }

  async open(id: string): Promise<void> {
    this.openItem = await this.api.item(id);
    this.emit();
  }

  closeItem(): void {
    this.openItem = null;
    this.emit();
  }

  /** Open the next reviewable item after the currently open one. */
  async openNext(): Promise<void> {
    const filtered = this.filteredItems();
    if (!filtered.length) {
      this.closeItem();
      return;
    }
    const currentId = this.openItem?.id;
    const idx = filtered.findIndex((it) => it.id === currentId);
    const next = filtered[(idx + 1) % filtered.length];
    if (next.id === currentId) {
      this.closeItem();
      return;
    }
    await this.open(next.id);
  }

  /**
   * Optimistically mark the item, POST the decision, then reconcile with
   * the server's copy. On 409 (someone else decided first) or any other
   * failure, roll the optimistic edit back and surface a notice; a 409
   * additionally refetches so the UI shows the server's verdict.
   */
  async decide(id: string, verdict: 'accept' | 'reject', note = ''): Promise<boolean> {
    const index = this.items.findIndex((it) => it.id === id);
    const previousItem = index >= 0 ? { ...this.items[index] } : null;
    const previousOpen = this.openItem;
    const optimistic: ItemStatus = verdict === 'accept' ? 'accepted' : 'rejected';
    if (index >= 0) this.items[index] = { ...this.items[index], status: optimistic };
    if (this.openItem?.id === id) {
      this.openItem = { ...this.openItem, status: optimistic };
    }
    this.emit();
    try {
      const decided = await this.api.decide(id, verdict, note);
      // reconcile: the server's 2xx body is the truth
      const at = this.items.findIndex((it) => it.id === id);
      if (at >= 0) this.items[at] = { ...this.items[at], status: decided.status };
      if (this.openItem?.id === id) this.openItem = decided;
      this.notice = null;
      this.emit();
      return true;
    } catch (err) {
      if (index >= 0 && previousItem) this.items[index] = previousItem;
      this.openItem = previousOpen;
      if (err instanceof ApiError && err.status === 409) {
        this.notice = 'Conflict: this item was already decided elsewhere.';
        this.emit();
        await this.refreshItem(id);
      } else {
        this.notice = err instanceof Error ? err.message : 'Decision failed.';
        this.emit();
      }
      return false;
    }
  }

  /** Pull one item's server state into the list (and detail view if open). */
  private async refreshItem(id: string): Promise<void> {
    try {
      const detail = await this.api.item(id);
      const at = this.items.findIndex((it) => it.id === id);
      if (at >= 0) this.items[at] = { ...this.items[at], status: detail.status };
      if (this.openItem?.id === id) this.openItem = detail;
      this.emit();
    } catch {
      // the item may be gone; a full refresh will sort it out
    }
  }
}

export function acceptedCountsByLabel(
  records: { label: string; provenance: string | null }[],
): Map<string, number> {
  const counts = new Map<string, number>();
  for (const rec of records) {
    if (rec.provenance === null) continue;
    counts.set(rec.label, (counts.get(rec.label) ?? 0) + 1);
  }
  return counts;
}
