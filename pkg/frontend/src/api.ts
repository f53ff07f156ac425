/** Typed client over the service API. All decisions round-trip through the
 * server; nothing here computes a verdict. */

import type {
  AuditReportDoc,
  CandidateRow,
  JudgementChoice,
  ProblemBody,
  SessionView,
  Verdict,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, detail: string) {
    super(detail);
    this.status = status;
    this.code = code;
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(base: string, fetchImpl?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`, init);
    const body = await response.json();
    if (!response.ok) {
      const problem = body as ProblemBody;
      throw new ApiError(
        response.status,
        problem.code ?? "error",
        problem.detail ?? response.statusText,
      );
    }
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/healthz");
  }

  uploadCandidate(data: ArrayBuffer | Uint8Array): Promise<{ candidate_id: string }> {
    const payload: Uint8Array = data instanceof Uint8Array ? data : new Uint8Array(data);
    const copy = new Uint8Array(payload); // detached, plain ArrayBuffer body
    return this.request("/candidates", {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: copy,
    });
  }

  listCandidates(): Promise<{ candidates: CandidateRow[] }> {
    return this.request("/candidates");
  }

  startSession(candidateId: string, mode: "automated" | "interactive"): Promise<SessionView> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ candidate_id: candidateId, mode }),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request(`/sessions/${sessionId}`);
  }

  submitJudgement(
    sessionId: string,
    hitId: string,
    choice: JudgementChoice,
  ): Promise<SessionView> {
    return this.request(`/sessions/${sessionId}/judgements`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ hit_id: hitId, choice }),
    });
  }

  getVerdict(candidateId: string): Promise<{ verdict: Verdict }> {
    return this.request(`/verdicts/${candidateId}`);
  }

  getReport(dataset: string): Promise<{ report: AuditReportDoc }> {
    return this.request(`/reports/${dataset}`);
  }
}
