import { ApiClient } from './api.js';
import { ConsoleStore } from './store.js';
import { render } from './view.js';

const POLL_INTERVAL_MS = 5000;

function boot(): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  const token = new URLSearchParams(location.search).get('token');
  const store = new ConsoleStore(new ApiClient('', undefined, token));
  store.subscribe((state) => render(root, state));

  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement) return;
    switch (event.key) {
      case 'j':
        store.select(1);
        break;
      case 'k':
        store.select(-1);
        break;
      case 'a':
        void store.resolveSelected('approve');
        break;
      case 'r':
        void store.resolveSelected('reject');
        break;
    }
  });

  root.addEventListener('click', (event) => {
    const row = (event.target as HTMLElement).closest('li.item');
    if (!(row instanceof HTMLElement) || row.dataset.itemId === undefined) return;
    const index = Array.from(row.parentElement?.children ?? []).indexOf(row);
    const current = store.getState().selected;
    store.select(index - current);
  });

  void store.refresh();
  setInterval(() => void store.refresh(), POLL_INTERVAL_MS);
}

boot();
