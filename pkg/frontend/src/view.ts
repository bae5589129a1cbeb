import type { StoreState } from './store.js';
import type { ConceptSnapshot, QueueItem } from './types.js';

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function conceptCard(title: string, snapshot: ConceptSnapshot | undefined): HTMLElement {
  const card = el('div', 'concept-card');
  card.appendChild(el('h3', 'concept-title', title));
  if (!snapshot) {
    card.appendChild(el('p', 'muted', 'no snapshot recorded'));
    return card;
  }
  card.appendChild(el('p', 'concept-id', snapshot.id));
  card.appendChild(el('p', '', `labels: ${snapshot.labels.join('; ')}`));
  card.appendChild(el('p', '', `definition: ${snapshot.definition ?? 'none'}`));
  card.appendChild(el('p', '', `rank: ${snapshot.rank}`));
  card.appendChild(el('p', '', `parents: ${snapshot.parents.join('; ') || 'none'}`));
  card.appendChild(el('p', '', `children: ${snapshot.children.join('; ') || 'none'}`));
  card.appendChild(
    el('p', '', `instances: ${snapshot.ground_set.join('; ') || 'none recorded'}`),
  );
  return card;
}

function detailPanel(item: QueueItem): HTMLElement {
  const panel = el('div', 'detail');
  const cards = el('div', 'cards');
  cards.appendChild(conceptCard(item.pair_labels[0], item.context.a));
  cards.appendChild(conceptCard(item.pair_labels[1], item.context.b));
  panel.appendChild(cards);
  const decision = item.context.decision;
  if (decision) {
    const block = el('div', 'decision');
    block.appendChild(el('h3', '', 'Model verdict'));
    block.appendChild(el('p', '', `kind: ${decision.kind}`));
    block.appendChild(el('p', '', `confidence: ${decision.confidence ?? 'n/a'}`));
    block.appendChild(
      el('p', '', `combined score: ${decision.f_score ?? 'undefined (uncertain)'}`),
    );
    block.appendChild(el('p', '', `cosine channel: ${decision.sim_score ?? 'n/a'}`));
    block.appendChild(el('pre', 'raw', decision.raw ?? ''));
    panel.appendChild(block);
  }
  if (item.context.note) {
    panel.appendChild(el('p', 'note', item.context.note));
  }
  return panel;
}

export function render(root: HTMLElement, state: StoreState): void {
  root.replaceChildren();
  const header = el('header', 'bar');
  header.appendChild(el('h1', '', 'Validation queue'));
  header.appendChild(
    el('span', 'version', `graph v${state.graphVersion} · ${state.items.length} pending`),
  );
  header.appendChild(el('span', 'keys', 'j/k navigate · a approve · r reject'));
  root.appendChild(header);

  if (state.error) root.appendChild(el('p', 'error', state.error));
  if (state.lastSummary) root.appendChild(el('p', 'summary', state.lastSummary));

  if (state.items.length === 0) {
    const empty = el('div', 'empty');
    empty.appendChild(el('h2', '', 'Queue is empty'));
    empty.appendChild(el('p', 'muted', 'New low-confidence pairs will appear here.'));
    root.appendChild(empty);
    return;
  }

  const list = el('ul', 'queue');
  state.items.forEach((item, index) => {
    const row = el('li', index === state.selected ? 'item selected' : 'item');
    row.appendChild(el('span', `badge badge-${item.reason}`, item.reason));
    row.appendChild(
      el('span', 'pair', `${item.pair_labels[0]}  ↔  ${item.pair_labels[1]}`),
    );
    row.appendChild(el('span', 'confidence', `confidence ${item.confidence}`));
    row.dataset.itemId = String(item.id);
    list.appendChild(row);
  });
  root.appendChild(list);

  const current = state.items[state.selected];
  if (current) root.appendChild(detailPanel(current));
}
