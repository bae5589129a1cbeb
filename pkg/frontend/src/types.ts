/** Wire types mirroring the validation service; the console never derives
 * or recomputes any of these values client-side. */

export interface DecisionSnapshot {
  kind: string;
  f_score: number | null;
  sim_score: number | null;
  confidence: number | null;
  raw: string | null;
}

export interface ConceptSnapshot {
  id: string;
  labels: string[];
  definition: string | null;
  rank: number;
  parents: string[];
  children: string[];
  ground_set: string[];
}

export interface PairContext {
  a?: ConceptSnapshot;
  b?: ConceptSnapshot;
  decision?: DecisionSnapshot;
  note?: string;
}

export type ItemStatus = 'pending' | 'approved' | 'rejected';

export interface QueueItem {
  id: number;
  pair: [string, string];
  pair_labels: [string, string];
  reason: string;
  confidence: number;
  context: PairContext;
  status: ItemStatus;
  graph_version: number;
}

export interface ResolveSuccess {
  id: number;
  status: ItemStatus;
  graph_version: number;
  merged_class: string[] | null;
  negative_constraint: boolean;
}

export type ResolveOutcome =
  | { kind: 'resolved'; result: ResolveSuccess }
  | { kind: 'conflict'; currentVersion: number }
  | { kind: 'gone' };
