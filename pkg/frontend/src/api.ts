/**
 * Typed client for the annotation service API.
 *
 * Every mutation carries the last seen version token (optimistic
 * concurrency) and a fresh request id (idempotent retries). A stale token
 * surfaces as StaleVersionError so the UI can show its reload banner.
 */

export type Aspect = "relevance" | "mapping" | "violation";

export interface Judgment {
  target_id: string;
  annotator_id?: string;
  aspect: Aspect;
  verdict: "yes" | "no";
  likert?: number | null;
}

export interface DescriptionBrief {
  id: string;
  title?: string;
  body?: string;
  kind?: string;
  status?: string;
  conversation_id?: string;
  assigned_concept_id?: string | null;
  score?: number | null;
}

export interface ClusterSummary {
  cluster_id: string;
  iteration: number;
  size: number;
  member_ids: string[];
  exemplars: DescriptionBrief[];
}

export interface ConceptRecord {
  id: string;
  name: string;
  description: string;
  settings: string[];
  violation_sketch: string;
  actor_roles: string;
  recipient_roles: string;
  seed_ids: string[];
  good_ids: string[];
  bad_ids: string[];
  assigned_ids: string[];
}

export interface CoverageStats {
  concepts: number;
  mapped: number;
  total: number;
  coverage_fraction: number;
}

export interface Progress {
  version: number;
  coverage: CoverageStats;
  per_concept: Record<string, { name: string; assigned: number }>;
  round: number;
  flagged: { description_id: string; concept_id: string; reason: string }[];
}

export interface ConceptDraft {
  id?: string;
  name: string;
  description: string;
  settings: string[];
  violation_sketch: string;
  actor_roles: string;
  recipient_roles: string;
  seed_ids: string[];
  annotator?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public offendingIds: string[] = [],
  ) {
    super(message);
  }
}

export class StaleVersionError extends ApiError {}

export interface ApiClientOptions {
  fetchFn?: typeof fetch;
  token?: string;
  makeRequestId?: () => string;
}

let requestCounter = 0;

function defaultRequestId(): string {
  requestCounter += 1;
  return `req-${Date.now().toString(36)}-${requestCounter}-${Math.random().toString(36).slice(2, 8)}`;
}

export class ApiClient {
  private readonly fetchFn: typeof fetch;
  private readonly token?: string;
  private readonly makeRequestId: () => string;
  private lastVersion: number | null = null;

  constructor(
    public readonly baseUrl: string,
    options: ApiClientOptions = {},
  ) {
    this.fetchFn = options.fetchFn ?? fetch;
    this.token = options.token;
    this.makeRequestId = options.makeRequestId ?? defaultRequestId;
  }

  get version(): number | null {
    return this.lastVersion;
  }

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    return headers;
  }

  private track(payload: unknown): void {
    if (payload && typeof payload === "object" && "version" in payload) {
      const version = (payload as { version: unknown }).version;
      if (typeof version === "number") this.lastVersion = version;
    }
  }

  private async parseError(response: Response): Promise<never> {
    let code = `http_${response.status}`;
    let message = response.statusText;
    let offending: string[] = [];
    try {
      const body = (await response.json()) as {
        code?: string;
        message?: string;
        offending_ids?: string[];
        detail?: { code?: string; message?: string; offending_ids?: string[] };
      };
      const detail = body.detail ?? body;
      code = detail.code ?? code;
      message = detail.message ?? message;
      offending = detail.offending_ids ?? [];
    } catch {
      /* non-JSON error body; keep defaults */
    }
    if (response.status === 409 && code === "stale_version") {
      throw new StaleVersionError(response.status, code, message, offending);
    }
    throw new ApiError(response.status, code, message, offending);
  }

  private async get<T>(path: string, params?: Record<string, string | number>): Promise<T> {
    const url = new URL(this.baseUrl + path);
    for (const [key, value] of Object.entries(params ?? {})) {
      url.searchParams.set(key, String(value));
    }
    const response = await this.fetchFn(url.toString(), { headers: this.headers(false) });
    if (!response.ok) await this.parseError(response);
    const payload = (await response.json()) as T;
    this.track(payload);
    return payload;
  }

  private async post<T>(path: string, body: Record<string, unknown>): Promise<T> {
    const withMeta = {
      ...body,
      expected_version: this.lastVersion ?? undefined,
      request_id: this.makeRequestId(),
    };
    const response = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify(withMeta),
    });
    if (!response.ok) await this.parseError(response);
    const payload = (await response.json()) as T;
    this.track(payload);
    return payload;
  }

  // -- reads --

  getState(): Promise<{ version: number; state: Record<string, unknown> }> {
    return this.get("/state");
  }

  getProgress(): Promise<Progress> {
    return this.get("/progress");
  }

  getClusters(round?: number): Promise<{ version: number; round: number; clusters: ClusterSummary[] }> {
    return this.get("/clusters", round === undefined ? undefined : { round });
  }

  getClusterSamples(clusterId: string, n = 10): Promise<{ samples: DescriptionBrief[] }> {
    return this.get(`/clusters/${clusterId}/samples`, { n });
  }

  getConcepts(): Promise<{ version: number; concepts: ConceptRecord[] }> {
    return this.get("/concepts");
  }

  getDescription(id: string): Promise<{ description: DescriptionBrief; conversation: unknown }> {
    return this.get(`/descriptions/${id}`);
  }

  getQualityReport(aspect: Aspect, workflow: string): Promise<Record<string, unknown>> {
    return this.get("/reports/quality", { aspect, workflow });
  }

  getDistribution(): Promise<{ rows: { concept: string; field: string; count: number }[] }> {
    return this.get("/reports/distribution");
  }

  // -- mutations (each maps 1:1 onto a console action) --

  createConcept(draft: ConceptDraft): Promise<{ concept: ConceptRecord; version: number }> {
    return this.post("/concepts", { ...draft });
  }

  recordMarks(
    conceptId: string,
    good: string[],
    bad: string[],
    annotator?: string,
  ): Promise<{ warnings: string[]; version: number }> {
    return this.post(`/concepts/${conceptId}/marks`, { good, bad, annotator });
  }

  nextRound(k?: number, seed?: number): Promise<{ round: number; version: number }> {
    return this.post("/rounds/next", { k, seed });
  }

  augment(tau?: number): Promise<{ assigned: unknown[]; version: number }> {
    return this.post("/rounds/augment", { tau });
  }

  reassign(tau?: number, lambda?: number): Promise<{ applied: unknown; version: number }> {
    return this.post("/rounds/reassign", { tau, lambda });
  }

  postJudgments(judgments: Judgment[]): Promise<{ recorded: number; version: number }> {
    return this.post("/judgments", { judgments: judgments as unknown as Record<string, unknown>[] });
  }

  verify(aspect: Aspect, mode: "self" | "agents", threshold?: number): Promise<Record<string, unknown>> {
    return this.post("/verify", { aspect, mode, threshold });
  }
}
