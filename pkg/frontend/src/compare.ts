/** Side-by-side comparison view-model: matched-region highlights on both
 * images plus a caption diff. Built entirely from server-provided judgement
 * evidence; nothing is re-scored client-side. */

import { diffCaptions, isZeroDiff, type DiffToken } from "./diff.js";
import type { ElementMatch, JudgementDoc } from "./types.js";

export interface RegionHighlight {
  kind: string;
  side: "candidate" | "hit";
  region: [number, number, number, number];
}

export interface CompareViewModel {
  candidateImageUrl: string;
  hitImageUrl: string;
  highlights: RegionHighlight[];
  captionDiff: DiffToken[];
  zeroDiff: boolean; // identical pair: show the zero-diff banner
  noMatchedRegions: boolean; // unrelated pair: show the notice instead
}

export function buildCompareView(
  candidateImageUrl: string,
  hitImageUrl: string,
  candidateText: string,
  hitText: string,
  judgement: JudgementDoc | null,
): CompareViewModel {
  const highlights: RegionHighlight[] = [];
  const matches: ElementMatch[] = judgement?.matches ?? [];
  for (const match of matches) {
    if (match.candidate_region) {
      highlights.push({ kind: match.kind, side: "candidate", region: match.candidate_region });
    }
    if (match.hit_region) {
      highlights.push({ kind: match.kind, side: "hit", region: match.hit_region });
    }
  }
  const captionDiff = diffCaptions(candidateText, hitText);
  const zeroDiff = Boolean(judgement?.identical) && isZeroDiff(captionDiff);
  return {
    candidateImageUrl,
    hitImageUrl,
    highlights,
    captionDiff,
    zeroDiff,
    noMatchedRegions: matches.length === 0,
  };
}
