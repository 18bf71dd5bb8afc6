// DOM rendering. Pure functions from state to elements; all behavior is
// wired through callbacks so the store stays the single source of truth.

import type { StoreSnapshot } from './state.js';
import type { AugmentedRecord, ItemDetail, QueueSummary } from './types.js';

export interface ViewHandlers {
  onFilter(filter: string): void;
  onPage(page: number): void;
  onOpen(id: string): void;
  onClose(): void;
  onDecide(id: string, verdict: 'accept' | 'reject', note: string): void;
  onNext(): void;
  onShowManifest(): void;
  onDismissNotice(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className = '', text = '',
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function renderQueue(snap: StoreSnapshot, handlers: ViewHandlers): HTMLElement {
  const root = el('div', 'queue');

  const bar = el('div', 'filter-bar');
  for (const filter of ['pending', 'accepted', 'rejected', 'all']) {
    const btn = el('button', snap.filter === filter ? 'active' : '', filter);
    btn.addEventListener('click', () => handlers.onFilter(filter));
    bar.appendChild(btn);
  }
  const manifestBtn = el('button', 'manifest-link', 'augmented manifest');
  manifestBtn.addEventListener('click', () => handlers.onShowManifest());
  bar.appendChild(manifestBtn);
  root.appendChild(bar);

  if (snap.notice) {
    const notice = el('div', 'notice', snap.notice);
    const dismiss = el('button', 'dismiss', 'x');
    dismiss.addEventListener('click', () => handlers.onDismissNotice());
    notice.appendChild(dismiss);
    root.appendChild(notice);
  }

  if (snap.busy && !snap.pageItems.length) {
    root.appendChild(el('p', 'empty-state', 'loading queue...'));
    return root;
  }
  if (!snap.pageItems.length) {
    root.appendChild(el('p', 'empty-state',
      `no ${snap.filter === 'all' ? '' : snap.filter + ' '}items in the queue`));
    return root;
  }

  const list = el('ul', 'item-list');
  for (const item of snap.pageItems) {
    list.appendChild(renderQueueRow(item, handlers));
  }
  root.appendChild(list);

  const pages = Math.max(1, Math.ceil(snap.totalFiltered / snap.pageSize));
  if (pages > 1) {
    const pager = el('div', 'pager');
    const prev = el('button', '', 'prev');
    prev.disabled = snap.page === 0;
    prev.addEventListener('click', () => handlers.onPage(snap.page - 1));
    const next = el('button', '', 'next');
    next.disabled = snap.page >= pages - 1;
    next.addEventListener('click', () => handlers.onPage(snap.page + 1));
    pager.append(prev, el('span', '', `page ${snap.page + 1} / ${pages}`), next);
    root.appendChild(pager);
  }
  return root;
}

function renderQueueRow(item: QueueSummary, handlers: ViewHandlers): HTMLElement {
  const row = el('li', `item-row status-${item.status}`);
  row.dataset.id = item.id;
  if (item.thumbnail) {
    const img = el('img', 'thumb');
    img.src = item.thumbnail;
    img.alt = item.label;
    row.appendChild(img);
  }
  row.appendChild(el('span', 'label', item.label));
  row.appendChild(el('span', `badge badge-${item.status}`, item.status));
  row.appendChild(el('code', 'item-id', item.id.slice(0, 12)));
  row.addEventListener('click', () => handlers.onOpen(item.id));
  return row;
}

export function renderItem(item: ItemDetail, handlers: ViewHandlers): HTMLElement {
  const root = el('div', 'detail');
  const head = el('div', 'detail-head');
  head.appendChild(el('h2', '', `${item.label} — ${item.status}`));
  const close = el('button', 'close', 'back to queue');
  close.addEventListener('click', () => handlers.onClose());
  head.appendChild(close);
  root.appendChild(head);

  const panes = el('div', 'side-by-side');
  const sourcePane = el('div', 'pane');
  sourcePane.appendChild(el('h3', '', 'source micrograph'));
  if (item.source_image.asset) {
    const img = el('img', 'source');
    img.src = item.source_image.asset;
    img.alt = 'source';
    sourcePane.appendChild(img);
  }
  panes.appendChild(sourcePane);

  const synthPane = el('div', 'pane');
  synthPane.appendChild(el('h3', '', `synthetic images (${item.synthetics.length})`));
  const grid = el('div', 'synth-grid');
  for (const synth of item.synthetics) {
    if (synth.asset) {
      const img = el('img', 'synth');
      img.src = synth.asset;
      img.alt = 'synthetic';
      grid.appendChild(img);
    }
  }
  synthPane.appendChild(grid);
  panes.appendChild(synthPane);
  root.appendChild(panes);

  const qa = el('div', 'transcript');
  qa.appendChild(el('h3', '', 'generated description'));
  for (const row of item.transcript) {
    const section = document.createElement('details');
    const title = row.question.split('**')[1] ?? `prompt ${row.prompt_id}`;
    const summary = document.createElement('summary');
    summary.textContent = `${row.prompt_id}. ${title}`;
    section.appendChild(summary);
    section.appendChild(el('p', 'question', row.question));
    section.appendChild(el('p', 'answer', row.answer));
    qa.appendChild(section);
  }
  root.appendChild(qa);

  if (item.status === 'pending') {
    const controls = el('div', 'decision-controls');
    const note = document.createElement('input');
    note.type = 'text';
    note.placeholder = 'reviewer note (optional)';
    note.className = 'note';
    const accept = el('button', 'accept', 'accept (A)');
    accept.addEventListener('click', () =>
      handlers.onDecide(item.id, 'accept', note.value));
    const reject = el('button', 'reject', 'reject (R)');
    reject.addEventListener('click', () =>
      handlers.onDecide(item.id, 'reject', note.value));
    const next = el('button', 'next', 'next (N)');
    next.addEventListener('click', () => handlers.onNext());
    controls.append(accept, reject, next, note);
    root.appendChild(controls);
  } else if (item.decision) {
    root.appendChild(el('p', 'decision-note',
      `${item.decision.verdict} — ${item.decision.note || 'no note'}`));
  }
  return root;
}

export function renderManifestSummary(
  records: AugmentedRecord[], counts: Map<string, number>,
  onClose: () => void,
): HTMLElement {
  const root = el('div', 'manifest');
  const head = el('div', 'detail-head');
  head.appendChild(el('h2', '', 'augmented manifest'));
  const close = el('button', 'close', 'back to queue');
  close.addEventListener('click', onClose);
  head.appendChild(close);
  root.appendChild(head);

  const originals = records.filter((r) => r.provenance === null).length;
  const added = records.length - originals;
  root.appendChild(el('p', '', `${originals} original train records, `
    + `${added} accepted synthetic records`));

  if (counts.size) {
    const table = el('table', 'counts');
    const header = el('tr');
    header.append(el('th', '', 'label'), el('th', '', 'accepted synthetics'));
    table.appendChild(header);
    for (const [label, count] of [...counts.entries()].sort()) {
      const tr = el('tr');
      tr.append(el('td', '', label), el('td', '', String(count)));
      table.appendChild(tr);
    }
    root.appendChild(table);
  } else {
    root.appendChild(el('p', 'empty-state', 'no accepted synthetics yet'));
  }
  return root;
}
