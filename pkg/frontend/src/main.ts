import { CurationApi, rememberToken, storedToken } from './api.js';
import { QueueStore, acceptedCountsByLabel } from './state.js';
import type { StoreSnapshot } from './state.js';
import { renderItem, renderManifestSummary, renderQueue } from './views.js';
import type { ViewHandlers } from './views.js';

const app = document.getElementById('app');
if (!app) throw new Error('missing #app mount point');

const api = new CurationApi('', storedToken());
const store = new QueueStore(api);
let showingManifest = false;

const handlers: ViewHandlers = {
  onFilter: (filter) => store.setFilter(filter as never),
  onPage: (page) => store.setPage(page),
  onOpen: (id) => void store.open(id),
  onClose: () => store.closeItem(),
  onDecide: (id, verdict, note) => void decideAndAdvance(id, verdict, note),
  onNext: () => void store.openNext(),
  onShowManifest: () => void showManifest(),
  onDismissNotice: () => store.clearNotice(),
};

async function decideAndAdvance(
  id: string, verdict: 'accept' | 'reject', note: string,
): Promise<void> {
  const committed = await store.decide(id, verdict, note);
  if (committed) await store.openNext();
}

async function showManifest(): Promise<void> {
  showingManifest = true;
  const records = await api.augmentedManifest();
  if (!app) return;
  app.replaceChildren(renderManifestSummary(
    records, acceptedCountsByLabel(records), () => {
      showingManifest = false;
      render(store.snapshot());
    }));
}

function render(snap: StoreSnapshot): void {
  if (!app || showingManifest) return;
  if (snap.openItem) {
    app.replaceChildren(renderItem(snap.openItem, handlers));
  } else {
    app.replaceChildren(renderQueue(snap, handlers));
  }
}

// keyboard shortcuts on the open item: A accept, R reject, N next
document.addEventListener('keydown', (ev) => {
  const target = ev.target as HTMLElement | null;
  if (target && (target.tagName === 'INPUT' || target.tagName === 'TEXTAREA')) return;
  const open = store.snapshot().openItem;
  if (!open || open.status !== 'pending') return;
  const key = ev.key.toLowerCase();
  const note = (document.querySelector('input.note') as HTMLInputElement | null)
    ?.value ?? '';
  if (key === 'a') void decideAndAdvance(open.id, 'accept', note);
  else if (key === 'r') void decideAndAdvance(open.id, 'reject', note);
  else if (key === 'n') void store.openNext();
});

// one-time bearer token prompt, kept in session storage
const tokenField = document.getElementById('token') as HTMLInputElement | null;
if (tokenField) {
  tokenField.value = storedToken();
  tokenField.addEventListener('change', () => {
    rememberToken(tokenField.value);
    api.setToken(tokenField.value);
    void store.refresh();
  });
}

store.subscribe(render);
void store.refresh();
