/** Browser entry: wires the queue, session walkthrough, compare view and
 * dashboard into the page. The server is the single source of truth. */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { buildCompareView } from "./compare.js";
import { buildDashboard } from "./dashboard.js";
import { buildQueue } from "./queue.js";
import { renderCompare, renderDashboard, renderQueue, renderSession } from "./render.js";
import type { JudgementChoice } from "./types.js";

const api = new ApiClient("");
const controller = new SessionController(api);

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshQueue(): Promise<void> {
  const { candidates } = await api.listCandidates();
  el("queue").innerHTML = renderQueue(buildQueue(candidates));
}

function repaintSession(): void {
  el("session").innerHTML = renderSession(controller);
}

controller.onChange(repaintSession);

async function openSession(candidateId: string): Promise<void> {
  await controller.start(candidateId);
  repaintSession();
}

async function showCompare(hitId: string): Promise<void> {
  const view = controller.view;
  if (!view) return;
  const hit = view.pending_hits.find((h) => h.hit_id === hitId);
  const judged = view.judgements.find((j) => j.hit_id === hitId) ?? null;
  const model = buildCompareView(
    `/candidates/${view.candidate_id}/image`,
    hit?.image_url ?? "",
    "",
    hit?.text ?? "",
    judged,
  );
  el("compare").innerHTML = renderCompare(model);
}

async function loadDashboard(dataset: string): Promise<void> {
  try {
    const { report } = await api.getReport(dataset);
    el("dashboard").innerHTML = renderDashboard(buildDashboard(report));
  } catch {
    el("dashboard").innerHTML = renderDashboard(buildDashboard(null));
  }
}

function wire(): void {
  el("queue").addEventListener("click", (event) => {
    const row = (event.target as HTMLElement).closest("tr[data-candidate]");
    if (row) void openSession(row.getAttribute("data-candidate")!);
  });
  el("session").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const hit = target.closest("figure[data-hit]");
    if (!hit) return;
    const hitId = hit.getAttribute("data-hit")!;
    const choice = target.getAttribute("data-choice") as JudgementChoice | null;
    if (choice) {
      void controller.judge(hitId, choice).then(() => void refreshQueue());
    } else {
      void showCompare(hitId);
    }
  });
  document.addEventListener("keydown", (event) => {
    if (["j", "k", "s", "i", "u", "ArrowDown", "ArrowUp"].includes(event.key)) {
      event.preventDefault();
      void controller.handleKey(event.key).then(() => void refreshQueue());
    }
  });
  const uploader = el("uploader") as HTMLInputElement;
  uploader.addEventListener("change", async () => {
    const file = uploader.files?.[0];
    if (!file) return;
    await api.uploadCandidate(await file.arrayBuffer());
    await refreshQueue();
  });
  el("dashboard-load").addEventListener("click", () => {
    const dataset = (el("dashboard-dataset") as HTMLInputElement).value;
    if (dataset) void loadDashboard(dataset);
  });
}

wire();
void refreshQueue();
