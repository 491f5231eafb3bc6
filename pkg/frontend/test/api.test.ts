import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, StaleVersionError } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  headers: Record<string, string>;
  body?: unknown;
}

function stubFetch(
  responder: (recorded: Recorded) => { status: number; body: unknown },
): { fetchFn: typeof fetch; calls: Recorded[] } {
  const calls: Recorded[] = [];
  const fetchFn = (async (input: unknown, init?: RequestInit) => {
    const recorded: Recorded = {
      url: String(input),
      method: init?.method ?? "GET",
      headers: (init?.headers as Record<string, string>) ?? {},
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    };
    calls.push(recorded);
    const { status, body } = responder(recorded);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }) as typeof fetch;
  return { fetchFn, calls };
}

describe("api client", () => {
  it("tracks the version from reads and sends it on mutations", async () => {
    const { fetchFn, calls } = stubFetch((recorded) => {
      if (recorded.url.endsWith("/progress")) {
        return {
          status: 200,
          body: { version: 41, coverage: {}, per_concept: {}, round: 1, flagged: [] },
        };
      }
      return { status: 200, body: { assigned: [], version: 42 } };
    });
    const client = new ApiClient("http://svc", { fetchFn, makeRequestId: () => "rid-1" });
    await client.getProgress();
    expect(client.version).toBe(41);
    await client.augment(0.7);
    const mutation = calls[1];
    expect(mutation.method).toBe("POST");
    expect(mutation.body).toMatchObject({ tau: 0.7, expected_version: 41, request_id: "rid-1" });
    expect(client.version).toBe(42);
  });

  it("raises StaleVersionError on stale tokens", async () => {
    const { fetchFn } = stubFetch(() => ({
      status: 409,
      body: { code: "stale_version", message: "expected 3, store is at 9", offending_ids: [] },
    }));
    const client = new ApiClient("http://svc", { fetchFn });
    await expect(client.reassign(0.7, 1.0)).rejects.toBeInstanceOf(StaleVersionError);
  });

  it("surfaces structured validation errors", async () => {
    const { fetchFn } = stubFetch(() => ({
      status: 422,
      body: { code: "seed count out of range", message: "4 seeds", offending_ids: ["d1"] },
    }));
    const client = new ApiClient("http://svc", { fetchFn });
    const failure = client.createConcept({
      name: "x",
      description: "",
      settings: [],
      violation_sketch: "",
      actor_roles: "",
      recipient_roles: "",
      seed_ids: ["d1"],
    });
    await expect(failure).rejects.toMatchObject({
      code: "seed count out of range",
      status: 422,
      offendingIds: ["d1"],
    });
    await expect(
      client.createConcept({
        name: "x",
        description: "",
        settings: [],
        violation_sketch: "",
        actor_roles: "",
        recipient_roles: "",
        seed_ids: ["d1"],
      }),
    ).rejects.toBeInstanceOf(ApiError);
  });

  it("sends the bearer token when configured", async () => {
    const { fetchFn, calls } = stubFetch(() => ({ status: 200, body: { version: 1 } }));
    const client = new ApiClient("http://svc", { fetchFn, token: "ann1:secret" });
    await client.getState();
    expect(calls[0].headers["Authorization"]).toBe("Bearer ann1:secret");
  });

  it("passes query parameters through", async () => {
    const { fetchFn, calls } = stubFetch(() => ({
      status: 200,
      body: { version: 1, round: 2, clusters: [] },
    }));
    const client = new ApiClient("http://svc", { fetchFn });
    await client.getClusters(2);
    expect(calls[0].url).toBe("http://svc/clusters?round=2");
  });
});
