/** Review queue view-model: one row per uploaded candidate with its status
 * chip (verdict code when decided, else the latest session status). */

import type { CandidateRow } from "./types.js";

export interface QueueRow {
  candidateId: string;
  imageUrl: string;
  chip: string; // "CM", "nMIT (viral)", "awaiting_judgement", "new", ...
  decided: boolean;
}

export function buildQueue(candidates: CandidateRow[]): QueueRow[] {
  return candidates.map((candidate) => {
    let chip = "new";
    let decided = false;
    if (candidate.verdict) {
      chip = candidate.verdict.outcome + (candidate.verdict.viral_flag ? " (viral)" : "");
      decided = true;
    } else if (candidate.sessions.length) {
      chip = candidate.sessions[candidate.sessions.length - 1].status;
    }
    return {
      candidateId: candidate.candidate_id,
      imageUrl: `/candidates/${candidate.candidate_id}/image`,
      chip,
      decided,
    };
  });
}
