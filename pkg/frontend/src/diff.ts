/** Token-level caption diff (LCS) for the compare view. */

export interface DiffToken {
  text: string;
  op: "same" | "removed" | "added";
}

function tokens(text: string): string[] {
  return text
    .toLowerCase()
    .replace(/[^\w\s]/g, " ")
    .split(/\s+/)
    .filter(Boolean);
}

export function diffCaptions(a: string, b: string): DiffToken[] {
  const ta = tokens(a);
  const tb = tokens(b);
  const n = ta.length;
  const m = tb.length;
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] =
        ta[i] === tb[j] ? lcs[i + 1][j + 1] + 1 : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const out: DiffToken[] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (ta[i] === tb[j]) {
      out.push({ text: ta[i], op: "same" });
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      out.push({ text: ta[i], op: "removed" });
      i++;
    } else {
      out.push({ text: tb[j], op: "added" });
      j++;
    }
  }
  while (i < n) out.push({ text: ta[i++], op: "removed" });
  while (j < m) out.push({ text: tb[j++], op: "added" });
  return out;
}

export function isZeroDiff(diff: DiffToken[]): boolean {
  return diff.every((t) => t.op === "same");
}
