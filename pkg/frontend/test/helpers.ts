/**
 * Integration-test plumbing: corpus/replay fixtures, the pipeline CLI, and
 * a spawned annotation service.
 */

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { promisify } from "node:util";
import * as fs from "node:fs";
import * as path from "node:path";

const execFileP = promisify(execFile);

export const WORDS = [
  "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
  "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen",
  "eighteen", "nineteen", "twenty", "alpha", "beta", "gamma", "delta", "epsilon",
  "zeta", "eta", "theta", "iota", "kappa",
];

export const TAU = 0.75;
export const LAMBDA = 1.0;

export function themeA(i: number): string {
  return `Elder respect ${WORDS[i]}: younger family members defer to the judgment and advice of elders at home`;
}

export function themeB(i: number): string {
  return `Gift etiquette ${WORDS[i]}: guests bring a modest present when visiting and offer it politely with both hands`;
}

export function writeCorpus(file: string): void {
  const lines: string[] = [];
  for (let j = 0; j < 12; j++) {
    lines.push(
      JSON.stringify({
        id: `conv${String(j).padStart(2, "0")}`,
        source: "fixture",
        turns: [
          { index: 0, speaker: "A", text: `opening line ${j}`, labels: {} },
          { index: 1, speaker: "B", text: `reply line ${j}`, labels: {} },
        ],
        relationships: [],
        settings: null,
        summary: null,
        summary_provenance: null,
        language: "zh",
      }),
    );
  }
  fs.writeFileSync(file, lines.join("\n") + "\n");
}

export function writeReplay(file: string): void {
  const sessions: Record<string, string[]> = {};
  for (let j = 0; j < 12; j++) {
    const theme = j < 6 ? themeA : themeB;
    const items = [];
    for (let k = 0; k < 5; k++) items.push(theme((j % 6) * 5 + k));
    sessions[`conv${String(j).padStart(2, "0")}`] = [
      "translated text",
      "A: B — acquaintances",
      "Norms:\n" + items.join("\n") + "\n",
      "A short summary of the exchange.",
    ];
  }
  fs.writeFileSync(file, JSON.stringify({ sessions }));
}

export function writeConfig(file: string, replayPath: string): void {
  fs.writeFileSync(
    file,
    JSON.stringify({
      tau: TAU,
      lambda: LAMBDA,
      seed: 7,
      chat_provider: { type: "replay", path: replayPath },
      embedding_provider: { type: "hashed", dim: 64 },
    }),
  );
}

export async function runCli(args: string[]): Promise<string> {
  const { stdout } = await execFileP("python3", ["-m", "convnorms.cli", ...args], {
    timeout: 120_000,
  });
  return stdout;
}

export async function buildBaseProject(tmp: string): Promise<string> {
  const corpus = path.join(tmp, "corpus.jsonl");
  const replay = path.join(tmp, "replay.json");
  const config = path.join(tmp, "config.json");
  writeCorpus(corpus);
  writeReplay(replay);
  writeConfig(config, replay);
  const project = path.join(tmp, "base");
  await runCli(["ingest", "--project", project, "--source", corpus, "--format", "generic_jsonl"]);
  await runCli(["elicit", "--project", project, "--config", config]);
  await runCli(["embed", "--project", project, "--config", config]);
  return project;
}

export interface ServiceHandle {
  baseUrl: string;
  stop: () => void;
}

export async function spawnService(project: string, port: number): Promise<ServiceHandle> {
  const proc: ChildProcess = spawn(
    "python3",
    ["-m", "convnorms.cli", "serve", "--project", project, "--host", "127.0.0.1", "--port", String(port)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  const baseUrl = `http://127.0.0.1:${port}`;
  const stderr: string[] = [];
  proc.stderr?.on("data", (chunk) => stderr.push(String(chunk)));

  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited early (${proc.exitCode}): ${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${baseUrl}/progress`);
      if (response.ok) {
        return { baseUrl, stop: () => proc.kill("SIGTERM") };
      }
    } catch {
      /* not up yet */
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  proc.kill("SIGTERM");
  throw new Error(`service on ${baseUrl} did not come up: ${stderr.join("")}`);
}

export function pickPort(offset: number): number {
  return 18000 + ((process.pid * 7 + offset * 131) % 4000);
}
