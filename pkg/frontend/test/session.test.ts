/**
 * Scripted console session against a live service, compared with the
 * equivalent headless CLI run: create a concept from 5 seeds, mark 3 good
 * and 3 bad examples, reassign, enter 10 Likert judgments. Afterwards both
 * stores must hold the same state, and a hard refresh must rebuild the view
 * from API responses alone.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { ApiClient } from "../src/api.js";
import { JudgmentQueue, hydrate } from "../src/state.js";
import {
  LAMBDA,
  TAU,
  buildBaseProject,
  pickPort,
  runCli,
  spawnService,
  type ServiceHandle,
} from "./helpers.js";

const CONCEPT = {
  id: "concept-elder",
  name: "Elder Respect",
  description: "Deference to the judgment of senior family members.",
  settings: ["family"],
  violation_sketch: "Dismissing or mocking an elder's advice.",
  actor_roles: "younger family members",
  recipient_roles: "elder family members",
};

let tmp: string;
let apiProject: string;
let cliProject: string;
let service: ServiceHandle;
let client: ApiClient;
let seedIds: string[] = [];
let goodIds: string[] = [];
let badIds: string[] = [];
let judgedIds: string[] = [];

function descriptionsByPrefix(
  state: Record<string, unknown>,
  prefix: string,
): string[] {
  const descriptions = state["descriptions"] as Record<string, { title: string; kind: string }>;
  return Object.entries(descriptions)
    .filter(([, d]) => d.kind === "norm" && d.title.startsWith(prefix))
    .map(([id]) => id)
    .sort();
}

beforeAll(async () => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "console-session-"));
  const base = await buildBaseProject(tmp);
  apiProject = path.join(tmp, "api-run");
  cliProject = path.join(tmp, "cli-run");
  fs.cpSync(base, apiProject, { recursive: true });
  fs.cpSync(base, cliProject, { recursive: true });
  service = await spawnService(apiProject, pickPort(1));
  client = new ApiClient(service.baseUrl);
});

afterAll(() => {
  service?.stop();
  fs.rmSync(tmp, { recursive: true, force: true });
});

describe("scripted console session", () => {
  it("matches the equivalent headless CLI run", async () => {
    // --- browser-script path (every call maps 1:1 onto a console action)
    await hydrate(client); // picks up the version token
    await client.nextRound(2, 7);

    const state0 = (await client.getState()).state;
    seedIds = descriptionsByPrefix(state0, "Elder respect").slice(0, 5);
    badIds = descriptionsByPrefix(state0, "Gift etiquette").slice(0, 3);
    expect(seedIds).toHaveLength(5);

    await client.createConcept({ ...CONCEPT, seed_ids: seedIds, annotator: "ann1" });
    await client.augment(TAU);

    const concepts = await client.getConcepts();
    const concept = concepts.concepts.find((c) => c.id === CONCEPT.id)!;
    goodIds = concept.assigned_ids
      .filter((id) => !concept.seed_ids.includes(id))
      .sort()
      .slice(0, 3);
    expect(goodIds).toHaveLength(3);
    const marks = await client.recordMarks(CONCEPT.id, goodIds, badIds, "ann1");
    expect(marks.warnings.length).toBeGreaterThan(0); // 3 is outside the advised 5-10

    await client.reassign(TAU, LAMBDA);

    judgedIds = descriptionsByPrefix(state0, "Elder respect").slice(0, 10);
    const queue = new JudgmentQueue();
    for (const target of judgedIds) {
      queue.add({
        target_id: target,
        annotator_id: "ann1",
        aspect: "relevance",
        verdict: "yes",
        likert: 4,
      });
    }
    expect(queue.unsaved).toBe(10);
    expect(await queue.flush(client)).toBe(10);
    expect(queue.unsaved).toBe(0);

    // --- the equivalent headless script
    const conceptFile = path.join(tmp, "concept.json");
    fs.writeFileSync(
      conceptFile,
      JSON.stringify({ ...CONCEPT, seed_ids: seedIds, created_by: "ann1" }),
    );
    const judgmentsFile = path.join(tmp, "judgments.jsonl");
    fs.writeFileSync(
      judgmentsFile,
      judgedIds
        .map((target) =>
          JSON.stringify({
            target_id: target,
            annotator_id: "ann1",
            aspect: "relevance",
            verdict: "yes",
            likert: 4,
          }),
        )
        .join("\n") + "\n",
    );
    await runCli(["cluster", "--project", cliProject, "--k", "2", "--seed", "7"]);
    await runCli(["concept", "import", "--project", cliProject, "--file", conceptFile]);
    await runCli(["augment", "--project", cliProject, "--tau", String(TAU)]);
    await runCli([
      "marks", "--project", cliProject, "--concept", CONCEPT.id,
      "--good", goodIds.join(","), "--bad", badIds.join(","), "--annotator", "ann1",
    ]);
    await runCli([
      "reassign", "--project", cliProject, "--tau", String(TAU), "--lambda", String(LAMBDA),
    ]);
    await runCli(["judgments", "--project", cliProject, "--file", judgmentsFile]);

    // --- the two stores must be in the same state
    const headless = await spawnService(cliProject, pickPort(2));
    try {
      const headlessClient = new ApiClient(headless.baseUrl);
      const apiState = await client.getState();
      const cliState = await headlessClient.getState();
      expect(apiState.version).toBe(cliState.version);
      expect(apiState.state).toEqual(cliState.state);
    } finally {
      headless.stop();
    }
  });

  it("reconstructs the exact view from API responses after a hard refresh", async () => {
    const viewBefore = await hydrate(client);
    const freshClient = new ApiClient(service.baseUrl); // no carried-over state
    const viewAfter = await hydrate(freshClient);
    expect(viewAfter).toEqual(viewBefore);
    expect(viewAfter.concepts.map((c) => c.name)).toContain("Elder Respect");
    expect(viewAfter.coverage.mapped).toBeGreaterThanOrEqual(30);
  });
});
