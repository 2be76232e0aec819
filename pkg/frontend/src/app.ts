// Single-page judging flow: render one blinded pair at a time, submit the
// verdict, advance. A verdict that fails to reach the server is kept in a
// retry buffer (the only client-side persistence) and the view shows an
// unsaved marker until the server acknowledges it.

import { AssessClient, NextItem, PairView, Verdict, VERDICTS } from "./api.js";

export interface AppConfig {
  baseUrl: string;
  sessionId: string;
  judgeId: string;
  root: HTMLElement;
  retryDelayMs?: number;
}

interface PendingVerdict {
  questionId: string;
  verdict: Verdict;
}

const SHORTCUTS: Record<string, Verdict> = {
  "1": "Left", l: "Left",
  "2": "Right", r: "Right",
  "3": "Both", b: "Both",
  "4": "Neither", n: "Neither",
};

export class AssessmentApp {
  private client: AssessClient;
  private root: HTMLElement;
  private pending: PendingVerdict | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  // one verdict per rendered view: bumping the token invalidates stale clicks
  private viewToken = 0;
  private submittingToken: number | null = null;
  private keyHandler: ((e: KeyboardEvent) => void) | null = null;

  constructor(private config: AppConfig) {
    this.client = new AssessClient(config.baseUrl);
    this.root = config.root;
  }

  async start(): Promise<void> {
    this.installKeyboard();
    await this.advance();
  }

  stop(): void {
    if (this.keyHandler) {
      this.root.ownerDocument.removeEventListener("keydown", this.keyHandler);
      this.keyHandler = null;
    }
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
  }

  hasPending(): boolean {
    return this.pending !== null;
  }

  private installKeyboard(): void {
    this.keyHandler = (event: KeyboardEvent) => {
      const verdict = SHORTCUTS[event.key.toLowerCase()];
      if (verdict) {
        void this.submit(verdict);
      }
    };
    this.root.ownerDocument.addEventListener("keydown", this.keyHandler);
  }

  private async advance(): Promise<void> {
    let item: NextItem;
    try {
      item = await this.client.nextItem(this.config.sessionId,
                                        this.config.judgeId);
    } catch (err) {
      this.renderError(String(err));
      return;
    }
    if (item.done) {
      this.renderDone(item.progress.done, item.progress.total);
    } else {
      this.renderPair(item);
    }
  }

  private currentQuestionId: string | null = null;

  private renderPair(view: PairView): void {
    this.viewToken += 1;
    this.submittingToken = null;
    this.currentQuestionId = view.question_id;
    const doc = this.root.ownerDocument;
    this.root.textContent = "";

    const progress = doc.createElement("div");
    progress.className = "progress";
    progress.textContent = `Judged ${view.progress.done} of ${view.progress.total}`;
    const bar = doc.createElement("div");
    bar.className = "progress-bar";
    const fill = doc.createElement("div");
    fill.className = "progress-fill";
    const percent = view.progress.total === 0 ? 0
      : Math.round(100 * view.progress.done / view.progress.total);
    fill.style.width = `${percent}%`;
    bar.appendChild(fill);
    progress.appendChild(bar);
    this.root.appendChild(progress);

    const question = doc.createElement("h2");
    question.className = "question";
    question.textContent = view.question;
    this.root.appendChild(question);

    const columns = doc.createElement("div");
    columns.className = "columns";
    for (const [heading, answers] of [["Left", view.left],
                                      ["Right", view.right]] as const) {
      const column = doc.createElement("div");
      column.className = "column";  // identical styling on both sides
      const title = doc.createElement("h3");
      title.textContent = heading;
      column.appendChild(title);
      const list = doc.createElement("ol");
      for (const answer of answers) {
        const li = doc.createElement("li");
        li.textContent = answer;
        list.appendChild(li);
      }
      column.appendChild(list);
      columns.appendChild(column);
    }
    this.root.appendChild(columns);

    const controls = doc.createElement("div");
    controls.className = "verdicts";
    VERDICTS.forEach((verdict, i) => {
      const button = doc.createElement("button");
      button.className = "verdict";
      button.dataset.verdict = verdict;
      button.textContent = `${verdict} (${i + 1})`;
      button.addEventListener("click", () => void this.submit(verdict));
      controls.appendChild(button);
    });
    this.root.appendChild(controls);

    const status = doc.createElement("div");
    status.className = "status";
    this.root.appendChild(status);
  }

  private renderDone(done: number, total: number): void {
    this.currentQuestionId = null;
    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    const box = doc.createElement("div");
    box.className = "completion";
    const h = doc.createElement("h2");
    h.textContent = "Session complete";
    const p = doc.createElement("p");
    p.textContent = `Progress ${done}/${total}. Thank you for judging.`;
    box.appendChild(h);
    box.appendChild(p);
    this.root.appendChild(box);
  }

  private renderError(message: string): void {
    const doc = this.root.ownerDocument;
    this.root.textContent = "";
    const box = doc.createElement("div");
    box.className = "error";
    box.textContent = `Could not reach the assessment service: ${message}`;
    this.root.appendChild(box);
  }

  private setStatus(text: string, unsaved: boolean): void {
    const status = this.root.querySelector<HTMLElement>(".status");
    if (status) {
      status.textContent = text;
      status.classList.toggle("unsaved", unsaved);
    }
  }

  private setControlsEnabled(enabled: boolean): void {
    this.root.querySelectorAll<HTMLButtonElement>("button.verdict")
      .forEach(b => { b.disabled = !enabled; });
  }

  async submit(verdict: Verdict): Promise<void> {
    if (this.currentQuestionId === null) {
      return;  // completion screen; shortcuts do nothing
    }
    if (this.submittingToken === this.viewToken) {
      return;  // a verdict for this view is already on its way
    }
    this.submittingToken = this.viewToken;
    this.setControlsEnabled(false);
    const questionId = this.currentQuestionId;
    try {
      await this.client.submitJudgment(this.config.sessionId,
                                       this.config.judgeId,
                                       questionId, verdict);
    } catch {
      this.pending = { questionId, verdict };
      this.setStatus("Verdict not saved yet; retrying...", true);
      this.scheduleRetry();
      return;
    }
    this.pending = null;
    await this.advance();
  }

  private scheduleRetry(): void {
    if (this.retryTimer !== null) {
      return;
    }
    const delay = this.config.retryDelayMs ?? 2000;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      void this.flushPending();
    }, delay);
  }

  async flushPending(): Promise<boolean> {
    if (!this.pending) {
      return true;
    }
    const { questionId, verdict } = this.pending;
    try {
      await this.client.submitJudgment(this.config.sessionId,
                                       this.config.judgeId,
                                       questionId, verdict);
    } catch {
      this.setStatus("Verdict not saved yet; retrying...", true);
      this.scheduleRetry();
      return false;
    }
    this.pending = null;
    this.setStatus("", false);
    await this.advance();
    return true;
  }
}
