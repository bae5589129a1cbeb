import type { PairContext, QueueItem, ResolveOutcome } from './types.js';

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface QueueApi {
  listQueue(): Promise<QueueItem[]>;
  resolve(itemId: number, decision: 'approve' | 'reject', version: number): Promise<ResolveOutcome>;
  pairContext(itemId: number): Promise<PairContext>;
}

/** Thin fetch client for the validation service. */
export class ApiClient implements QueueApi {
  private readonly fetchFn: typeof fetch;

  constructor(
    private readonly base: string = '',
    fetchFn?: typeof fetch,
    private readonly token: string | null = null,
  ) {
    // Bind the global fetch: calling it as a bare method reference throws
    // "Illegal invocation" in browsers.
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return this.token ? { ...extra, Authorization: `Bearer ${this.token}` } : extra;
  }

  async listQueue(): Promise<QueueItem[]> {
    const response = await this.fetchFn(this.url('/api/v1/queue?status=pending'), {
      headers: this.headers(),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `queue fetch failed (${response.status})`);
    }
    return (await response.json()) as QueueItem[];
  }

  async resolve(
    itemId: number,
    decision: 'approve' | 'reject',
    version: number,
  ): Promise<ResolveOutcome> {
    const response = await this.fetchFn(this.url(`/api/v1/queue/${itemId}/resolve`), {
      method: 'POST',
      headers: this.headers({ 'Content-Type': 'application/json' }),
      body: JSON.stringify({ decision, version }),
    });
    if (response.status === 409) {
      const body = (await response.json()) as { detail?: { current_version?: number } };
      return { kind: 'conflict', currentVersion: body.detail?.current_version ?? -1 };
    }
    if (response.status === 404) {
      return { kind: 'gone' };
    }
    if (!response.ok) {
      throw new ApiError(response.status, `resolve failed (${response.status})`);
    }
    return { kind: 'resolved', result: await response.json() };
  }

  async pairContext(itemId: number): Promise<PairContext> {
    const response = await this.fetchFn(this.url(`/api/v1/pairs/${itemId}/context`), {
      headers: this.headers(),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `context fetch failed (${response.status})`);
    }
    const body = (await response.json()) as { context: PairContext };
    return body.context;
  }
}
