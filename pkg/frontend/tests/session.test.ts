// Scripted end-to-end judging session against a live assessment service:
// render, four-verdict submission, resume-after-refresh, completion screen,
// DOM condition-leak scan, and the results endpoint reflecting every verdict.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AssessmentApp } from "../src/app.js";
import type { Verdict } from "../src/api.js";
import { createFiveQuestionSession, startService, stopService,
         LiveService } from "./service.js";

// not condition names, but they must never show up in any rendered state
const FORBIDDEN = ["idf", "cnn", "condition_a", "condition_b",
                   "A-left", "A-right", "answers_a", "answers_b"];

let service: LiveService;

beforeAll(async () => {
  service = await startService();
});

afterAll(() => {
  stopService(service);
});

function freshRoot(): HTMLElement {
  document.body.innerHTML = "";
  const root = document.createElement("div");
  root.id = "app";
  document.body.appendChild(root);
  return root;
}

function scanForLeaks(root: HTMLElement): void {
  const html = root.innerHTML;
  for (const token of FORBIDDEN) {
    expect(html).not.toContain(token);
  }
}

function clickVerdict(root: HTMLElement, verdict: Verdict): void {
  const button = root.querySelector<HTMLButtonElement>(
    `button.verdict[data-verdict="${verdict}"]`);
  expect(button, `verdict button ${verdict}`).toBeTruthy();
  button!.click();
}

async function waitFor(predicate: () => boolean,
                       timeoutMs = 10000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) {
      throw new Error("condition not reached in time");
    }
    await new Promise(resolve => setTimeout(resolve, 20));
  }
}

function progressText(root: HTMLElement): string {
  return root.querySelector(".progress")?.textContent ?? "";
}

describe("five-question judging session", () => {
  const sessionId = "ui-flow";

  it("completes the full flow against the live service", async () => {
    await createFiveQuestionSession(service.baseUrl, sessionId);

    let root = freshRoot();
    let app = new AssessmentApp({
      baseUrl: service.baseUrl,
      sessionId,
      judgeId: "webjudge",
      root,
    });
    await app.start();

    // initial render: question, two equal columns, four verdict controls
    expect(root.querySelector(".question")!.textContent).toMatch(/fact number/);
    const columns = root.querySelectorAll(".column");
    expect(columns).toHaveLength(2);
    expect(columns[0].querySelectorAll("li")).toHaveLength(2);
    expect(columns[1].querySelectorAll("li")).toHaveLength(2);
    expect(columns[0].className).toBe(columns[1].className);
    expect(root.querySelectorAll("button.verdict")).toHaveLength(4);
    expect(root.querySelector(".progress")!.textContent).toContain("0 of 5");
    scanForLeaks(root);

    // judge two items with different verdicts
    const judged: string[] = [];
    let count = 0;
    for (const verdict of ["Left", "Both"] as Verdict[]) {
      judged.push(root.querySelector(".question")!.textContent!);
      clickVerdict(root, verdict);
      count += 1;
      await waitFor(() => progressText(root).includes(`${count} of 5`));
      scanForLeaks(root);
    }
    expect(progressText(root)).toContain("2 of 5");

    // refresh mid-session: a brand-new app instance resumes at the first
    // unjudged item with progress preserved
    app.stop();
    root = freshRoot();
    app = new AssessmentApp({
      baseUrl: service.baseUrl,
      sessionId,
      judgeId: "webjudge",
      root,
    });
    await app.start();
    expect(root.querySelector(".progress")!.textContent).toContain("2 of 5");
    expect(judged).not.toContain(root.querySelector(".question")!.textContent);
    scanForLeaks(root);

    // finish with the remaining verdicts, exercising all four options
    for (const verdict of ["Right", "Neither", "Left"] as Verdict[]) {
      clickVerdict(root, verdict);
      count += 1;
      await waitFor(() => progressText(root).includes(`${count} of 5`)
                          || root.querySelector(".completion") !== null);
      scanForLeaks(root);
    }

    // completion screen with n/n progress
    await waitFor(() => root.querySelector(".completion") !== null);
    expect(root.querySelector(".completion")).toBeTruthy();
    expect(root.textContent).toContain("5/5");

    // the results endpoint reflects all five verdicts
    const results = await (await fetch(
      `${service.baseUrl}/api/sessions/${sessionId}/results`)).json();
    const row = results.judges.webjudge;
    expect(row.n).toBe(5);
    expect(row.both).toBe(1);
    expect(row.neither).toBe(1);
    // 2x Left + 1x Right resolve through the hidden side map
    expect(row[results.condition_a] + row[results.condition_b]).toBe(3);
    app.stop();
  });

  it("keyboard shortcuts submit the matching verdict", async () => {
    const sid = "ui-keys";
    await createFiveQuestionSession(service.baseUrl, sid);
    const root = freshRoot();
    const app = new AssessmentApp({
      baseUrl: service.baseUrl,
      sessionId: sid,
      judgeId: "keyboardist",
      root,
    });
    await app.start();
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "3" }));
    await waitFor(() => progressText(root).includes("1 of 5"));
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "n" }));
    await waitFor(() => progressText(root).includes("2 of 5"));
    const results = await (await fetch(
      `${service.baseUrl}/api/sessions/${sid}/results`)).json();
    expect(results.judges.keyboardist.both).toBe(1);
    expect(results.judges.keyboardist.neither).toBe(1);
    app.stop();
  });

  it("double-click produces exactly one submission", async () => {
    const sid = "ui-doubleclick";
    await createFiveQuestionSession(service.baseUrl, sid);
    const root = freshRoot();
    const app = new AssessmentApp({
      baseUrl: service.baseUrl,
      sessionId: sid,
      judgeId: "clicky",
      root,
    });
    await app.start();

    const realFetch = globalThis.fetch;
    let judgmentPosts = 0;
    globalThis.fetch = ((input: any, init?: any) => {
      if (typeof input === "string" && input.includes("/judgments")) {
        judgmentPosts += 1;
      }
      return realFetch(input, init);
    }) as typeof fetch;
    try {
      const button = root.querySelector<HTMLButtonElement>("button.verdict")!;
      button.click();
      button.click();  // second click must be swallowed by the view token
      await waitFor(() => progressText(root).includes("1 of 5"));
    } finally {
      globalThis.fetch = realFetch;
    }
    expect(judgmentPosts).toBe(1);
    expect(progressText(root)).toContain("1 of 5");
    app.stop();
  });

  it("retains and retries a verdict when the network fails", async () => {
    const sid = "ui-retry";
    await createFiveQuestionSession(service.baseUrl, sid);
    const root = freshRoot();
    const app = new AssessmentApp({
      baseUrl: service.baseUrl,
      sessionId: sid,
      judgeId: "flaky",
      root,
      retryDelayMs: 60000,  // manual flush drives the retry in this test
    });
    await app.start();
    const firstQuestion = root.querySelector(".question")!.textContent;

    const realFetch = globalThis.fetch;
    globalThis.fetch = (() =>
      Promise.reject(new TypeError("network down"))) as typeof fetch;
    try {
      clickVerdict(root, "Right");
      await waitFor(() => app.hasPending());
      // verdict retained locally; UI signals the unsaved state
      expect(app.hasPending()).toBe(true);
      expect(root.querySelector(".status.unsaved")!.textContent)
        .toMatch(/not saved/i);
      expect(root.querySelector(".question")!.textContent).toBe(firstQuestion);
    } finally {
      globalThis.fetch = realFetch;
    }

    // connectivity returns: the buffered verdict goes through and we advance
    expect(await app.flushPending()).toBe(true);
    expect(app.hasPending()).toBe(false);
    await waitFor(() => progressText(root).includes("1 of 5"));
    const results = await (await fetch(
      `${service.baseUrl}/api/sessions/${sid}/results`)).json();
    expect(results.judges.flaky.n).toBe(1);
    app.stop();
  });
});
