/**
 * View-model logic for the console, kept free of DOM so it is unit-testable.
 *
 * The UI holds no authoritative state: `hydrate` rebuilds the whole view
 * from service responses alone, and a hard refresh reproduces it exactly.
 */

import {
  ApiClient,
  ClusterSummary,
  ConceptDraft,
  ConceptRecord,
  Judgment,
  Progress,
} from "./api.js";

export const MIN_SEEDS = 5;
export const MAX_SEEDS = 10;

/** Seed multi-select with the 5-10 creation gate. */
export class SeedSelection {
  private ids = new Set<string>();

  toggle(id: string): void {
    if (this.ids.has(id)) this.ids.delete(id);
    else this.ids.add(id);
  }

  has(id: string): boolean {
    return this.ids.has(id);
  }

  get selected(): string[] {
    return [...this.ids].sort();
  }

  get count(): number {
    return this.ids.size;
  }

  get canCreate(): boolean {
    return this.count >= MIN_SEEDS && this.count <= MAX_SEEDS;
  }

  get hint(): string {
    if (this.count < MIN_SEEDS) return `select ${MIN_SEEDS - this.count} more (${this.count}/${MIN_SEEDS}-${MAX_SEEDS})`;
    if (this.count > MAX_SEEDS) return `too many selected (${this.count}/${MAX_SEEDS})`;
    return `${this.count} selected`;
  }

  clear(): void {
    this.ids.clear();
  }
}

export function isValidLikert(value: unknown): value is number {
  return typeof value === "number" && Number.isInteger(value) && value >= 1 && value <= 5;
}

export interface ConceptFormFields {
  name: string;
  description: string;
  settings: string; // comma-separated in the form
  violation_sketch: string;
  actor_roles: string;
  recipient_roles: string;
}

export function conceptDraft(fields: ConceptFormFields, seeds: SeedSelection): ConceptDraft {
  if (!fields.name.trim()) throw new Error("concept name is required");
  if (!seeds.canCreate) throw new Error(seeds.hint);
  return {
    name: fields.name.trim(),
    description: fields.description.trim(),
    settings: fields.settings
      .split(",")
      .map((s) => s.trim())
      .filter(Boolean),
    violation_sketch: fields.violation_sketch.trim(),
    actor_roles: fields.actor_roles.trim(),
    recipient_roles: fields.recipient_roles.trim(),
    seed_ids: seeds.selected,
  };
}

/** Good/bad mark toggles for one concept; a description is never both. */
export class MarkSelection {
  readonly good = new Set<string>();
  readonly bad = new Set<string>();

  markGood(id: string): void {
    this.bad.delete(id);
    if (this.good.has(id)) this.good.delete(id);
    else this.good.add(id);
  }

  markBad(id: string): void {
    this.good.delete(id);
    if (this.bad.has(id)) this.bad.delete(id);
    else this.bad.add(id);
  }

  get advisories(): string[] {
    const notes: string[] = [];
    for (const [label, set] of [["good", this.good], ["bad", this.bad]] as const) {
      if (set.size > 0 && (set.size < 5 || set.size > 10)) {
        notes.push(`${label} mark count ${set.size} outside the advised 5-10 range`);
      }
    }
    return notes;
  }

  get goodIds(): string[] {
    return [...this.good].sort();
  }

  get badIds(): string[] {
    return [...this.bad].sort();
  }
}

/**
 * Offline-tolerant judgment entry: invalid entries are rejected up front,
 * pending entries stay queued (visible as the unsaved badge) until a flush
 * to the service succeeds.
 */
export class JudgmentQueue {
  private pending: Judgment[] = [];

  add(judgment: Judgment): void {
    if (judgment.likert !== undefined && judgment.likert !== null && !isValidLikert(judgment.likert)) {
      throw new Error(`likert must be an integer 1-5, got ${judgment.likert}`);
    }
    if (judgment.likert != null && judgment.aspect !== "relevance") {
      throw new Error("likert ratings apply to relevance judgments only");
    }
    this.pending.push(judgment);
  }

  get unsaved(): number {
    return this.pending.length;
  }

  /** Push everything to the service; on failure the queue is kept intact. */
  async flush(client: ApiClient): Promise<number> {
    if (this.pending.length === 0) return 0;
    const batch = [...this.pending];
    const result = await client.postJudgments(batch);
    this.pending = [];
    return result.recorded;
  }
}

export interface ConsoleView {
  version: number;
  round: number;
  coverage: Progress["coverage"];
  perConcept: Progress["per_concept"];
  flagged: Progress["flagged"];
  clusters: ClusterSummary[];
  concepts: ConceptRecord[];
}

/** Rebuild the full view from service responses alone (hard-refresh path). */
export async function hydrate(client: ApiClient): Promise<ConsoleView> {
  const progress = await client.getProgress();
  const clusters = await client.getClusters(progress.round);
  const concepts = await client.getConcepts();
  return {
    version: concepts.version,
    round: progress.round,
    coverage: progress.coverage,
    perConcept: progress.per_concept,
    flagged: progress.flagged,
    clusters: clusters.clusters,
    concepts: concepts.concepts,
  };
}

export function coverageLabel(view: ConsoleView): string {
  const pct = (100 * view.coverage.coverage_fraction).toFixed(1);
  return `${view.coverage.mapped}/${view.coverage.total} descriptions mapped (${pct}%) across ${view.coverage.concepts} concepts`;
}
