/** Audit dashboard view-model: the results table plus stacked-bar segments
 * of per-dataset verdict proportions. */

import type { AuditReportDoc, Outcome, ReportRow } from "./types.js";

export const OUTCOME_ORDER: Outcome[] = ["CM", "FM", "MI", "TS", "MT", "nMIT", "nMM"];

export const OUTCOME_COLORS: Record<Outcome, string> = {
  CM: "#4c72b0",
  FM: "#55a868",
  MI: "#c44e52",
  TS: "#8172b2",
  MT: "#ccb974",
  nMIT: "#9f9f9f",
  nMM: "#5e5e5e",
};

export interface BarSegment {
  outcome: Outcome;
  percent: number;
  color: string;
}

export interface DashboardRow {
  dataset: string;
  segments: BarSegment[];
  memePercentage: number;
  nonmemePercentage: number;
  flags: string[];
}

export interface DashboardViewModel {
  empty: boolean;
  rows: DashboardRow[];
  averageNonmeme: number;
}

export function buildDashboard(report: AuditReportDoc | null): DashboardViewModel {
  if (!report || report.rows.length === 0) {
    return { empty: true, rows: [], averageNonmeme: 0 };
  }
  const rows = report.rows.map((row: ReportRow): DashboardRow => {
    const segments = OUTCOME_ORDER.map((outcome) => ({
      outcome,
      percent: 100 * (row.counts[outcome] ?? 0) / Math.max(1, row.sample_size),
      color: OUTCOME_COLORS[outcome],
    })).filter((segment) => segment.percent > 0);
    return {
      dataset: row.dataset,
      segments,
      memePercentage: row.meme_percentage,
      nonmemePercentage: row.nonmeme_percentage,
      flags: row.flags,
    };
  });
  return { empty: false, rows, averageNonmeme: report.average_nonmeme_percentage };
}

export function segmentTotal(row: DashboardRow): number {
  return row.segments.reduce((sum, segment) => sum + segment.percent, 0);
}
