import { describe, expect, it } from "vitest";

import { buildCompareView } from "../src/compare.js";
import { buildDashboard, segmentTotal } from "../src/dashboard.js";
import { diffCaptions, isZeroDiff } from "../src/diff.js";
import { buildQueue } from "../src/queue.js";
import { renderCompare, renderDashboard, renderQueue } from "../src/render.js";
import type { AuditReportDoc, CandidateRow, Outcome } from "../src/types.js";

describe("review queue", () => {
  it("empty store yields an empty queue", () => {
    expect(buildQueue([])).toEqual([]);
    expect(renderQueue([])).toContain("No candidates");
  });

  it("three uploaded candidates yield three rows", () => {
    const rows: CandidateRow[] = ["a", "b", "c"].map((id) => ({
      candidate_id: id,
      verdict: null,
      sessions: [],
    }));
    const queue = buildQueue(rows);
    expect(queue).toHaveLength(3);
    expect(queue.every((row) => row.chip === "new")).toBe(true);
  });

  it("completed candidate shows a verdict chip", () => {
    const rows: CandidateRow[] = [
      {
        candidate_id: "done",
        verdict: { candidate_id: "done", outcome: "nMIT", viral_flag: true, decided_by: "automated", thresholds: {} },
        sessions: [{ session_id: "s", status: "completed", mode: "automated" }],
      },
    ];
    const queue = buildQueue(rows);
    expect(queue[0].chip).toBe("nMIT (viral)");
    expect(queue[0].decided).toBe(true);
    expect(renderQueue(queue)).toContain("chip-verdict");
  });
});

describe("compare view", () => {
  it("identical pair shows the zero-diff banner", () => {
    const model = buildCompareView("/c.png", "/h.png", "same words", "same words", {
      hit_id: "h",
      related_but_distinct: false,
      identical: true,
      matches: [{ kind: "background", similarity: 1, candidate_region: [0, 0, 5, 5], hit_region: null }],
    });
    expect(model.zeroDiff).toBe(true);
    expect(renderCompare(model)).toContain("Identical pair");
  });

  it("template pair highlights the caption diff", () => {
    const model = buildCompareView("/c.png", "/h.png", "top text alpha", "top text omega", {
      hit_id: "h",
      related_but_distinct: true,
      matches: [{ kind: "background", similarity: 0.95, candidate_region: [0, 0, 9, 9], hit_region: [0, 0, 9, 9] }],
    });
    expect(model.zeroDiff).toBe(false);
    const changed = model.captionDiff.filter((t) => t.op !== "same").map((t) => t.text);
    expect(changed.sort()).toEqual(["alpha", "omega"]);
    const html = renderCompare(model);
    expect(html).toContain("tok-removed");
    expect(html).toContain("tok-added");
    expect(model.highlights).toHaveLength(2);
  });

  it("unrelated pair shows the no-matched-regions notice", () => {
    const model = buildCompareView("/c.png", "/h.png", "aaa", "bbb", {
      hit_id: "h",
      related_but_distinct: false,
      matches: [],
    });
    expect(model.noMatchedRegions).toBe(true);
    expect(renderCompare(model)).toContain("No matched regions");
  });

  it("caption diff is an LCS diff", () => {
    const diff = diffCaptions("better love story", "better love story");
    expect(isZeroDiff(diff)).toBe(true);
  });
});

function reportWith(counts: Record<Outcome, number>, size: number): AuditReportDoc {
  const percentages = Object.fromEntries(
    Object.entries(counts).map(([k, v]) => [k, (100 * v) / size]),
  ) as Record<Outcome, number>;
  const meme = counts.CM + counts.FM + counts.MI + counts.TS + counts.MT;
  return {
    schema_version: 1,
    rows: [
      {
        dataset: "demo",
        counts,
        percentages,
        meme_total: meme,
        nonmeme_total: size - meme,
        sample_size: size,
        meme_percentage: (100 * meme) / size,
        nonmeme_percentage: (100 * (size - meme)) / size,
        flags: [],
      },
    ],
    average_meme_percentage: (100 * meme) / size,
    average_nonmeme_percentage: (100 * (size - meme)) / size,
  };
}

describe("audit dashboard", () => {
  it("paper-shaped counts produce bars totalling 100%", () => {
    const report = reportWith(
      { CM: 33, FM: 7, MI: 7, TS: 6, MT: 2, nMIT: 39, nMM: 6 },
      100,
    );
    const model = buildDashboard(report);
    expect(model.empty).toBe(false);
    expect(segmentTotal(model.rows[0])).toBeCloseTo(100, 6);
    expect(renderDashboard(model)).toContain("45.0%");
  });

  it("empty report renders the empty state", () => {
    const model = buildDashboard(null);
    expect(model.empty).toBe(true);
    expect(renderDashboard(model)).toContain("No report");
  });

  it("single-type report yields a single segment", () => {
    const report = reportWith(
      { CM: 10, FM: 0, MI: 0, TS: 0, MT: 0, nMIT: 0, nMM: 0 },
      10,
    );
    const model = buildDashboard(report);
    expect(model.rows[0].segments).toHaveLength(1);
    expect(model.rows[0].segments[0].percent).toBeCloseTo(100, 6);
  });
});
