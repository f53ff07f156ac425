/** Wire types mirrored from the service's JSON schemas (schema_version 1). */

export type Outcome = "CM" | "FM" | "MI" | "TS" | "MT" | "nMIT" | "nMM";

export type JudgementChoice =
  | "shares_element_distinct"
  | "identical"
  | "unrelated";

export interface Verdict {
  candidate_id: string;
  outcome: Outcome;
  viral_flag: boolean;
  decided_by: string;
  thresholds: Record<string, unknown>;
}

export interface PendingHit {
  hit_id: string;
  visual_distance: number;
  text: string;
  text_score: number | null;
  origin: string;
  image_url: string;
}

export interface ElementMatch {
  kind: string;
  similarity: number;
  candidate_region: [number, number, number, number] | null;
  hit_region: [number, number, number, number] | null;
}

export interface JudgementDoc {
  hit_id: string;
  related_but_distinct: boolean;
  identical?: boolean;
  matches?: ElementMatch[];
  novelty?: { text_novelty: number; visual_novelty: number };
  decided_by?: string;
}

export interface SessionView {
  schema_version: number;
  session_id: string;
  candidate_id: string;
  mode: "automated" | "interactive";
  status: "running" | "awaiting_judgement" | "completed" | "aborted";
  current_step: number | null;
  pending_hits: PendingHit[];
  judgements: JudgementDoc[];
  verdict: Verdict | null;
}

export interface CandidateRow {
  candidate_id: string;
  verdict: Verdict | null;
  sessions: { session_id: string; status: string; mode: string }[];
}

export interface ReportRow {
  dataset: string;
  counts: Record<Outcome, number>;
  percentages: Record<Outcome, number>;
  meme_total: number;
  nonmeme_total: number;
  sample_size: number;
  meme_percentage: number;
  nonmeme_percentage: number;
  flags: string[];
}

export interface AuditReportDoc {
  schema_version: number;
  rows: ReportRow[];
  average_meme_percentage: number;
  average_nonmeme_percentage: number;
}

export interface ProblemBody {
  status: number;
  code: string;
  detail: string;
}
