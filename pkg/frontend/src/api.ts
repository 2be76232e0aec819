// Typed client for the assessment service JSON API. The client only ever
// sees question text, left/right answer texts, and progress counts; which
// system produced which side is resolved server-side after judging.

export type Verdict = "Left" | "Right" | "Both" | "Neither";

export const VERDICTS: readonly Verdict[] = ["Left", "Right", "Both", "Neither"];

export interface Progress {
  done: number;
  total: number;
}

export interface PairView {
  done: false;
  question_id: string;
  question: string;
  left: string[];
  right: string[];
  progress: Progress;
}

export interface SessionDone {
  done: true;
  progress: Progress;
}

export type NextItem = PairView | SessionDone;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson(response: Response): Promise<any> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, body.error ?? response.statusText);
  }
  return body;
}

export class AssessClient {
  constructor(private baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async nextItem(sessionId: string, judgeId: string): Promise<NextItem> {
    const response = await fetch(this.url(
      `/api/sessions/${encodeURIComponent(sessionId)}/next?judge=${encodeURIComponent(judgeId)}`));
    return asJson(response);
  }

  async submitJudgment(sessionId: string, judgeId: string,
                       questionId: string, verdict: Verdict): Promise<void> {
    const response = await fetch(this.url(
      `/api/sessions/${encodeURIComponent(sessionId)}/judgments`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        judge_id: judgeId,
        question_id: questionId,
        verdict,
      }),
    });
    await asJson(response);
  }

  async progress(sessionId: string, judgeId: string): Promise<Progress> {
    const response = await fetch(this.url(
      `/api/sessions/${encodeURIComponent(sessionId)}/progress?judge=${encodeURIComponent(judgeId)}`));
    return asJson(response);
  }
}
