/**
 * Browser entry point: renders the annotation console and wires every
 * control to exactly one API call. All state shown comes from `hydrate`;
 * any stale-version conflict swaps in the reload banner.
 */

import { ApiClient, StaleVersionError } from "./api.js";
import {
  ConsoleView,
  JudgmentQueue,
  MarkSelection,
  SeedSelection,
  conceptDraft,
  coverageLabel,
  hydrate,
  isValidLikert,
} from "./state.js";

const params = new URLSearchParams(window.location.search);
const client = new ApiClient(params.get("api") ?? "http://127.0.0.1:8700", {
  token: params.get("token") ?? undefined,
});

const seeds = new SeedSelection();
const queue = new JudgmentQueue();
const marks = new Map<string, MarkSelection>();

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function banner(message: string, kind: "error" | "info" | "reload"): HTMLElement {
  const box = el("div", { class: `banner ${kind}` }, message);
  if (kind === "reload") {
    const button = el("button", {}, "Reload view");
    button.onclick = () => void refresh();
    box.append(" ", button);
  }
  return box;
}

async function act(run: () => Promise<unknown>): Promise<void> {
  const slot = document.getElementById("messages")!;
  slot.textContent = "";
  try {
    await run();
    await refresh();
  } catch (err) {
    if (err instanceof StaleVersionError) {
      slot.append(banner("Someone else changed the project. Reload to continue.", "reload"));
      return;
    }
    slot.append(banner(err instanceof Error ? err.message : String(err), "error"));
  }
}

function renderProgress(view: ConsoleView): HTMLElement {
  const bar = el("div", { class: "progress-track" });
  const fill = el("div", { class: "progress-fill" });
  fill.style.width = `${Math.round(100 * view.coverage.coverage_fraction)}%`;
  bar.append(fill);
  const perConcept = Object.values(view.perConcept)
    .map((c) => `${c.name}: ${c.assigned}`)
    .join("  ·  ");
  return el(
    "section",
    { class: "pane" },
    el("h2", {}, `Round ${view.round}`),
    bar,
    el("p", {}, coverageLabel(view)),
    el("p", { class: "muted" }, perConcept || "no concepts yet"),
  );
}

function renderRoundControls(): HTMLElement {
  const tau = el("input", { type: "number", step: "0.05", value: "0.7", id: "tau" });
  const lambda = el("input", { type: "number", step: "0.1", value: "1.0", id: "lambda" });
  const k = el("input", { type: "number", value: "", placeholder: "auto", id: "k" });
  const seed = el("input", { type: "number", value: "0", id: "seed" });
  const cluster = el("button", {}, "New round (cluster)");
  cluster.onclick = () =>
    void act(() => client.nextRound(k.value ? Number(k.value) : undefined, Number(seed.value)));
  const augment = el("button", {}, "Augment");
  augment.onclick = () => void act(() => client.augment(Number(tau.value)));
  const reassign = el("button", {}, "Reassign");
  reassign.onclick = () => void act(() => client.reassign(Number(tau.value), Number(lambda.value)));
  return el(
    "section",
    { class: "pane" },
    el("h2", {}, "Round controls"),
    el("label", {}, "tau ", tau),
    el("label", {}, "lambda ", lambda),
    el("label", {}, "k ", k),
    el("label", {}, "seed ", seed),
    cluster,
    augment,
    reassign,
  );
}

function renderClusters(view: ConsoleView): HTMLElement {
  const pane = el("section", { class: "pane" }, el("h2", {}, "Clusters"));
  const counter = el("p", { id: "seed-hint" }, seeds.hint);
  pane.append(counter);
  for (const cluster of view.clusters) {
    const box = el("details", {}, el("summary", {}, `${cluster.cluster_id} (${cluster.size})`));
    for (const exemplar of cluster.exemplars) {
      const checkbox = el("input", { type: "checkbox" }) as HTMLInputElement;
      checkbox.checked = seeds.has(exemplar.id);
      checkbox.onchange = () => {
        seeds.toggle(exemplar.id);
        counter.textContent = seeds.hint;
        (document.getElementById("create-concept") as HTMLButtonElement).disabled = !seeds.canCreate;
      };
      const context = el("button", { class: "link" }, "context");
      context.onclick = () =>
        void act(async () => {
          const detail = await client.getDescription(exemplar.id);
          alert(JSON.stringify(detail.conversation, null, 2));
        });
      box.append(
        el("div", { class: "sample" }, checkbox, ` ${exemplar.title ?? exemplar.id}: ${exemplar.body ?? ""} `, context),
      );
    }
    const more = el("button", { class: "link" }, "more samples");
    more.onclick = () =>
      void act(async () => {
        const samples = await client.getClusterSamples(cluster.cluster_id, 25);
        alert(samples.samples.map((s) => `${s.title}: ${s.body}`).join("\n"));
      });
    box.append(more);
    pane.append(box);
  }
  return pane;
}

function renderConceptForm(): HTMLElement {
  const fields = {
    name: el("input", { id: "f-name" }) as HTMLInputElement,
    description: el("textarea", { id: "f-description" }) as HTMLTextAreaElement,
    settings: el("input", { id: "f-settings", placeholder: "family, workplace" }) as HTMLInputElement,
    violation_sketch: el("textarea", { id: "f-sketch" }) as HTMLTextAreaElement,
    actor_roles: el("input", { id: "f-actors" }) as HTMLInputElement,
    recipient_roles: el("input", { id: "f-recipients" }) as HTMLInputElement,
  };
  const create = el("button", { id: "create-concept" }, "Create concept") as HTMLButtonElement;
  create.disabled = !seeds.canCreate;
  create.onclick = () =>
    void act(async () => {
      const draft = conceptDraft(
        {
          name: fields.name.value,
          description: fields.description.value,
          settings: fields.settings.value,
          violation_sketch: fields.violation_sketch.value,
          actor_roles: fields.actor_roles.value,
          recipient_roles: fields.recipient_roles.value,
        },
        seeds,
      );
      await client.createConcept(draft);
      seeds.clear();
    });
  return el(
    "section",
    { class: "pane" },
    el("h2", {}, "New concept"),
    el("label", {}, "Name ", fields.name),
    el("label", {}, "Description ", fields.description),
    el("label", {}, "Settings ", fields.settings),
    el("label", {}, "Violation sketch ", fields.violation_sketch),
    el("label", {}, "Actor roles ", fields.actor_roles),
    el("label", {}, "Recipient roles ", fields.recipient_roles),
    create,
  );
}

function renderConcepts(view: ConsoleView): HTMLElement {
  const pane = el("section", { class: "pane" }, el("h2", {}, "Concepts & marks"));
  for (const concept of view.concepts) {
    const selection = marks.get(concept.id) ?? new MarkSelection();
    marks.set(concept.id, selection);
    const box = el(
      "details",
      {},
      el("summary", {}, `${concept.name} (${concept.assigned_ids.length} assigned)`),
      el("p", { class: "muted" }, concept.description),
    );
    const nonSeed = concept.assigned_ids.filter((id) => !concept.seed_ids.includes(id));
    for (const id of nonSeed) {
      const good = el("button", { class: selection.good.has(id) ? "mark on" : "mark" }, "good");
      const bad = el("button", { class: selection.bad.has(id) ? "mark on" : "mark" }, "bad");
      good.onclick = () => {
        selection.markGood(id);
        good.className = selection.good.has(id) ? "mark on" : "mark";
        bad.className = "mark";
      };
      bad.onclick = () => {
        selection.markBad(id);
        bad.className = selection.bad.has(id) ? "mark on" : "mark";
        good.className = "mark";
      };
      box.append(el("div", { class: "sample" }, `${id} `, good, " ", bad));
    }
    const submit = el("button", {}, "Save marks");
    submit.onclick = () =>
      void act(async () => {
        const result = await client.recordMarks(concept.id, selection.goodIds, selection.badIds);
        for (const warning of result.warnings) {
          document.getElementById("messages")!.append(banner(warning, "info"));
        }
        marks.delete(concept.id);
      });
    box.append(submit);
    pane.append(box);
  }
  return pane;
}

function renderJudgments(view: ConsoleView): HTMLElement {
  const target = el("input", { placeholder: "description id" }) as HTMLInputElement;
  const aspect = el("select", {}) as HTMLSelectElement;
  for (const value of ["relevance", "mapping", "violation"]) {
    aspect.append(el("option", { value }, value));
  }
  const likert = el("select", {}) as HTMLSelectElement;
  likert.append(el("option", { value: "" }, "no rating"));
  for (const value of [1, 2, 3, 4, 5]) {
    likert.append(el("option", { value: String(value) }, String(value)));
  }
  const unsaved = el("span", { id: "unsaved-badge", class: "badge" }, "");

  const enter = (verdict: "yes" | "no") => () => {
    const slot = document.getElementById("messages")!;
    try {
      const rating = likert.value === "" ? null : Number(likert.value);
      if (rating !== null && !isValidLikert(rating)) {
        throw new Error("likert must be an integer 1-5");
      }
      queue.add({
        target_id: target.value.trim(),
        aspect: aspect.value as "relevance" | "mapping" | "violation",
        verdict,
        likert: rating,
      });
      unsaved.textContent = `${queue.unsaved} unsaved`;
    } catch (err) {
      slot.append(banner(err instanceof Error ? err.message : String(err), "error"));
    }
  };
  const yes = el("button", {}, "yes");
  yes.onclick = enter("yes");
  const no = el("button", {}, "no");
  no.onclick = enter("no");
  const flush = el("button", {}, "Sync judgments");
  flush.onclick = () =>
    void act(async () => {
      await queue.flush(client);
      unsaved.textContent = queue.unsaved ? `${queue.unsaved} unsaved` : "";
    });

  const pane = el(
    "section",
    { class: "pane" },
    el("h2", {}, "Judgments"),
    el("label", {}, "Target ", target),
    el("label", {}, "Aspect ", aspect),
    el("label", {}, "Likert ", likert),
    yes,
    no,
    flush,
    unsaved,
  );
  if (view.flagged.length) {
    pane.append(
      el(
        "p",
        { class: "muted" },
        `flagged for review: ${view.flagged.map((f) => `${f.description_id} (${f.reason})`).join(", ")}`,
      ),
    );
  }
  return pane;
}

async function refresh(): Promise<void> {
  const root = document.getElementById("app")!;
  let view: ConsoleView;
  try {
    view = await hydrate(client);
  } catch (err) {
    root.replaceChildren(
      banner(`Service unreachable: ${err instanceof Error ? err.message : err}`, "error"),
    );
    return;
  }
  root.replaceChildren(
    renderProgress(view),
    renderRoundControls(),
    renderClusters(view),
    renderConceptForm(),
    renderConcepts(view),
    renderJudgments(view),
  );
}

document.addEventListener("DOMContentLoaded", () => void refresh());
