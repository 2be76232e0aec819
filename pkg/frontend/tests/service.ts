// Spawns a real assessment service for the scripted session tests. The
// service binds an ephemeral port and prints its address; everything the
// tests do goes through real HTTP.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface LiveService {
  baseUrl: string;
  process: ChildProcess;
  journal: string;
}

export async function startService(): Promise<LiveService> {
  const dir = mkdtempSync(join(tmpdir(), "assess-ui-"));
  const journal = join(dir, "journal.jsonl");
  const child = spawn("python3", [
    "-m", "qapipe", "assess", "serve",
    "--journal", journal,
    "--host", "127.0.0.1",
    "--port", "0",
  ], { stdio: ["ignore", "pipe", "pipe"] });

  const baseUrl = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error("service did not start in time")), 15000);
    let buffer = "";
    child.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/http:\/\/[\d.]+:\d+/);
      if (match) {
        clearTimeout(timer);
        resolve(match[0]);
      }
    });
    child.stderr!.on("data", () => { /* service logs are not interesting */ });
    child.on("exit", code => {
      clearTimeout(timer);
      reject(new Error(`service exited early with code ${code}`));
    });
  });
  return { baseUrl, process: child, journal };
}

export function stopService(service: LiveService): void {
  service.process.kill();
}

export async function createFiveQuestionSession(
    baseUrl: string, sessionId: string): Promise<void> {
  const questions: Record<string, string> = {};
  const answersA: Record<string, string[]> = {};
  const answersB: Record<string, string[]> = {};
  for (let i = 0; i < 5; i++) {
    const qid = `q${i}`;
    questions[qid] = `what is fact number ${i}`;
    answersA[qid] = [`first system answer ${i}.1`, `first system answer ${i}.2`];
    answersB[qid] = [`second system answer ${i}.1`, `second system answer ${i}.2`];
  }
  const response = await fetch(`${baseUrl}/api/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      questions,
      answers_a: answersA,
      answers_b: answersB,
      k: 2,
      seed: 99,
      session_id: sessionId,
    }),
  });
  if (!response.ok) {
    throw new Error(`create session failed: ${response.status}`);
  }
}
