import type { QueueApi } from './api.js';
import type { QueueItem, ResolveSuccess } from './types.js';

export interface StoreState {
  items: QueueItem[];
  selected: number;
  graphVersion: number;
  lastSummary: string | null;
  error: string | null;
  loading: boolean;
}

export type ResolveStatus = 'resolved' | 'conflict-refetched' | 'gone' | 'error';

type Listener = (state: StoreState) => void;

/**
 * Holds the queue snapshot plus the graph version it was fetched at.
 *
 * Resolutions are optimistic-concurrency guarded: the POST carries the
 * version this snapshot was taken at, and a 409 means somebody else moved
 * the graph first. In that case the store refetches and leaves the item
 * untouched -- it never retries the mutation on its own, so a stale click
 * (or a double click) can never apply twice.
 */
export class ConsoleStore {
  private state: StoreState = {
    items: [],
    selected: 0,
    graphVersion: 0,
    lastSummary: null,
    error: null,
    loading: false,
  };
  private listeners: Listener[] = [];
  private resolving = false;

  constructor(private readonly api: QueueApi) {}

  getState(): StoreState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(partial: Partial<StoreState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  /** Refresh the queue; server ordering (ascending confidence) is kept as-is. */
  async refresh(): Promise<void> {
    this.update({ loading: true });
    try {
      const items = await this.api.listQueue();
      const graphVersion = items.length > 0 ? items[0].graph_version : this.state.graphVersion;
      const selected = Math.min(this.state.selected, Math.max(items.length - 1, 0));
      this.update({ items, graphVersion, selected, error: null, loading: false });
    } catch (err) {
      this.update({ error: String(err), loading: false });
    }
  }

  select(delta: number): void {
    if (this.state.items.length === 0) return;
    const selected = Math.min(
      Math.max(this.state.selected + delta, 0),
      this.state.items.length - 1,
    );
    this.update({ selected });
  }

  selectedItem(): QueueItem | null {
    return this.state.items[this.state.selected] ?? null;
  }

  /** Resolve one item at the held version. Exactly one POST per call. */
  async resolveSelected(decision: 'approve' | 'reject'): Promise<ResolveStatus> {
    const item = this.selectedItem();
    if (item === null || this.resolving) return 'error';
    this.resolving = true;
    try {
      const outcome = await this.api.resolve(item.id, decision, this.state.graphVersion);
      switch (outcome.kind) {
        case 'resolved': {
          this.applyResolution(item, outcome.result, decision);
          return 'resolved';
        }
        case 'conflict': {
          // Stale snapshot: somebody else resolved first. Refetch and let
          // the expert look again; the mutation is NOT retried.
          await this.refresh();
          this.update({
            lastSummary: null,
            error: 'Graph moved underneath you; queue refreshed. Re-check before resolving.',
          });
          return 'conflict-refetched';
        }
        case 'gone': {
          await this.refresh();
          this.update({ error: `Item ${item.id} no longer exists; queue refreshed.` });
          return 'gone';
        }
      }
    } catch (err) {
      this.update({ error: String(err) });
      return 'error';
    } finally {
      this.resolving = false;
    }
  }

  private applyResolution(item: QueueItem, result: ResolveSuccess, decision: string): void {
    const items = this.state.items.filter((i) => i.id !== item.id);
    const summary =
      result.merged_class !== null
        ? `#${item.id} ${decision}d: class now {${result.merged_class.join(', ')}}`
        : result.negative_constraint
          ? `#${item.id} rejected: pair recorded as a negative constraint`
          : `#${item.id} ${decision}d`;
    this.update({
      items,
      graphVersion: result.graph_version,
      selected: Math.min(this.state.selected, Math.max(items.length - 1, 0)),
      lastSummary: summary,
      error: null,
    });
  }
}
