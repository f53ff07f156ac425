/** Session controller: server-authoritative state, single-flight judgement
 * submission, conflict banners, and a keyboard-only review flow.
 *
 * The controller never decides anything itself. Every judgement is one POST;
 * the view it holds afterwards is exactly what the server returned (no
 * optimistic updates), and a second click on an in-flight hit is suppressed
 * without issuing a request.
 */

import { ApiClient, ApiError } from "./api.js";
import type { JudgementChoice, SessionView } from "./types.js";

/** Operator guidance per walk step (original text, names what the step does). */
export const STEP_INSTRUCTIONS: Record<number, string> = {
  1: "Review images visually similar to the whole candidate. Accept a hit that reuses the same background but carries different text or visuals.",
  3: "The candidate's text has been cropped away. Accept a hit that reuses this background under a different caption.",
  4: "Each visual segment is searched separately. Accept a hit that reuses this segment alongside other content.",
  5: "The appended whitespace has been removed. Accept a hit that reuses this image under different text.",
  6: "Each superimposed-looking element is searched separately. Accept a hit that reuses this element elsewhere.",
  7: "These hits share the candidate's caption. Accept at least two that are visually unlike the candidate and each other.",
};

export interface BannerState {
  kind: "error" | "conflict" | "info";
  message: string;
}

export type ControllerListener = (controller: SessionController) => void;

export class SessionController {
  private readonly api: ApiClient;
  view: SessionView | null = null;
  banner: BannerState | null = null;
  focusIndex = 0;
  requestsIssued = 0;
  private inFlight: Set<string> = new Set();
  private listeners: ControllerListener[] = [];

  constructor(api: ApiClient) {
    this.api = api;
  }

  onChange(listener: ControllerListener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this);
  }

  get judgeable(): boolean {
    return this.view?.status === "awaiting_judgement";
  }

  get instruction(): string {
    const step = this.view?.current_step;
    if (step == null) return "";
    return STEP_INSTRUCTIONS[step] ?? "";
  }

  async start(candidateId: string): Promise<SessionView> {
    this.view = await this.api.startSession(candidateId, "interactive");
    this.focusIndex = 0;
    this.banner = null;
    this.emit();
    return this.view;
  }

  async refresh(): Promise<void> {
    if (!this.view) return;
    this.view = await this.api.getSession(this.view.session_id);
    this.clampFocus();
    this.emit();
  }

  /** Submit one judgement. Exactly one server call per accepted invocation;
   * re-entrant calls for the same hit while one is in flight are suppressed
   * and return null. */
  async judge(hitId: string, choice: JudgementChoice): Promise<SessionView | null> {
    if (!this.view || !this.judgeable) {
      this.banner = { kind: "error", message: "Session is not awaiting a judgement." };
      this.emit();
      return null;
    }
    if (this.inFlight.has(hitId)) {
      return null; // double-click: suppressed, no second request
    }
    this.inFlight.add(hitId);
    try {
      this.requestsIssued += 1;
      const next = await this.api.submitJudgement(this.view.session_id, hitId, choice);
      this.view = next;
      this.banner = null;
      this.clampFocus();
      return next;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.banner = {
          kind: "conflict",
          message: `Judgement conflict: ${error.message}`,
        };
        // the server state is authoritative; re-read it
        await this.refresh().catch(() => undefined);
      } else if (error instanceof ApiError) {
        this.banner = { kind: "error", message: error.message };
      } else {
        this.banner = { kind: "error", message: String(error) };
      }
      return null;
    } finally {
      this.inFlight.delete(hitId);
      this.emit();
    }
  }

  private clampFocus(): void {
    const count = this.view?.pending_hits.length ?? 0;
    if (this.focusIndex >= count) this.focusIndex = Math.max(0, count - 1);
  }

  focusedHitId(): string | null {
    const hits = this.view?.pending_hits ?? [];
    return hits.length ? hits[this.focusIndex].hit_id : null;
  }

  /** Keyboard-only flow: j/k or arrows move focus, s/i/u judge the focused
   * hit (shares-element+distinct, identical, unrelated). Returns true when
   * the key was consumed. */
  async handleKey(key: string): Promise<boolean> {
    const hits = this.view?.pending_hits ?? [];
    switch (key) {
      case "j":
      case "ArrowDown":
        if (hits.length) {
          this.focusIndex = Math.min(this.focusIndex + 1, hits.length - 1);
          this.emit();
        }
        return true;
      case "k":
      case "ArrowUp":
        if (hits.length) {
          this.focusIndex = Math.max(this.focusIndex - 1, 0);
          this.emit();
        }
        return true;
      case "s":
      case "i":
      case "u": {
        const hitId = this.focusedHitId();
        if (!hitId || !this.judgeable) return false;
        const choice: JudgementChoice =
          key === "s" ? "shares_element_distinct" : key === "i" ? "identical" : "unrelated";
        await this.judge(hitId, choice);
        return true;
      }
      default:
        return false;
    }
  }
}
