/** HTML renderers for the view-models. Pure string builders so they are
 * testable without a browser; main.ts mounts them into the page. */

import type { CompareViewModel } from "./compare.js";
import type { DashboardViewModel } from "./dashboard.js";
import type { QueueRow } from "./queue.js";
import type { SessionController } from "./controller.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderQueue(rows: QueueRow[]): string {
  if (rows.length === 0) {
    return `<p class="empty">No candidates uploaded yet.</p>`;
  }
  const items = rows
    .map(
      (row) => `
      <tr data-candidate="${esc(row.candidateId)}" tabindex="0">
        <td><img src="${esc(row.imageUrl)}" alt="" class="thumb"></td>
        <td class="mono">${esc(row.candidateId.slice(0, 12))}</td>
        <td><span class="chip ${row.decided ? "chip-verdict" : "chip-status"}">${esc(row.chip)}</span></td>
      </tr>`,
    )
    .join("");
  return `<table class="queue"><thead><tr><th></th><th>candidate</th><th>status</th></tr></thead><tbody>${items}</tbody></table>`;
}

export function renderSession(controller: SessionController): string {
  const view = controller.view;
  if (!view) return `<p class="empty">No active session.</p>`;
  const banner = controller.banner
    ? `<div class="banner banner-${controller.banner.kind}" role="alert">${esc(controller.banner.message)}</div>`
    : "";
  if (view.status === "completed" && view.verdict) {
    const viral = view.verdict.viral_flag ? " (viral)" : "";
    return `${banner}<div class="verdict-panel"><h2>Verdict: <span class="chip chip-verdict">${esc(view.verdict.outcome)}${viral}</span></h2><p>decided by ${esc(view.verdict.decided_by)}</p></div>`;
  }
  const hits = view.pending_hits
    .map(
      (hit, i) => `
      <figure class="hit ${i === controller.focusIndex ? "focused" : ""}" data-hit="${esc(hit.hit_id)}" tabindex="0">
        <img src="${esc(hit.image_url)}" alt="">
        <figcaption>
          <span class="mono">${esc(hit.hit_id)}</span>
          <span>d=${hit.visual_distance.toFixed(3)}</span>
          <span class="hit-text">${esc(hit.text)}</span>
        </figcaption>
        <div class="choices" ${controller.judgeable ? "" : "hidden"}>
          <button data-choice="shares_element_distinct">shares element, distinct [s]</button>
          <button data-choice="identical">identical [i]</button>
          <button data-choice="unrelated">unrelated [u]</button>
        </div>
      </figure>`,
    )
    .join("");
  const endMarker = `<p class="end-of-results">end of results (${view.pending_hits.length} pending)</p>`;
  return `
    ${banner}
    <div class="session" data-step="${view.current_step ?? ""}">
      <h2>Step ${view.current_step ?? "-"}</h2>
      <p class="instruction">${esc(controller.instruction)}</p>
      <div class="gallery">${hits}</div>
      ${endMarker}
    </div>`;
}

export function renderCompare(model: CompareViewModel): string {
  if (model.zeroDiff) {
    return `<div class="banner banner-info">Identical pair: no differences found.</div>`;
  }
  const notice = model.noMatchedRegions
    ? `<div class="banner banner-info">No matched regions between these images.</div>`
    : "";
  const boxes = model.highlights
    .map(
      (h) =>
        `<div class="highlight highlight-${esc(h.kind)} side-${h.side}" data-region="${h.region.join(",")}"></div>`,
    )
    .join("");
  const diff = model.captionDiff
    .map((token) => `<span class="tok tok-${token.op}">${esc(token.text)}</span>`)
    .join(" ");
  return `
    ${notice}
    <div class="compare">
      <div class="pane"><img src="${esc(model.candidateImageUrl)}" alt="candidate">${boxes}</div>
      <div class="pane"><img src="${esc(model.hitImageUrl)}" alt="hit"></div>
    </div>
    <p class="caption-diff">${diff}</p>`;
}

export function renderDashboard(model: DashboardViewModel): string {
  if (model.empty) {
    return `<p class="empty">No report for this dataset yet.</p>`;
  }
  const rows = model.rows
    .map((row) => {
      const segments = row.segments
        .map(
          (segment) =>
            `<div class="seg" style="width:${segment.percent.toFixed(1)}%;background:${segment.color}" title="${segment.outcome} ${segment.percent.toFixed(1)}%"></div>`,
        )
        .join("");
      const flags = row.flags.map((flag) => `<li>${esc(flag)}</li>`).join("");
      return `
      <tr>
        <td>${esc(row.dataset)}</td>
        <td><div class="bar">${segments}</div>${flags ? `<ul class="flags">${flags}</ul>` : ""}</td>
        <td>${row.memePercentage.toFixed(1)}%</td>
        <td>${row.nonmemePercentage.toFixed(1)}%</td>
      </tr>`;
    })
    .join("");
  return `
    <table class="dashboard">
      <thead><tr><th>dataset</th><th>type proportions</th><th>meme</th><th>non-meme</th></tr></thead>
      <tbody>${rows}</tbody>
      <tfoot><tr><td colspan="3">average non-meme</td><td>${model.averageNonmeme.toFixed(1)}%</td></tr></tfoot>
    </table>`;
}
