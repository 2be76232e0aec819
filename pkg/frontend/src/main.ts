// Entry point: configuration comes from query parameters only.
//   ?session=SESSION_ID&judge=JUDGE_ID[&api=http://host:port]
// With no api parameter the page talks to its own origin (the service can
// serve the built bundle directly).

import { AssessmentApp } from "./app.js";

function mount(): void {
  const params = new URLSearchParams(window.location.search);
  const root = document.querySelector<HTMLElement>("#app");
  if (!root) {
    return;
  }
  const sessionId = params.get("session");
  const judgeId = params.get("judge");
  if (!sessionId || !judgeId) {
    root.textContent =
      "Missing configuration: open this page as ?session=<id>&judge=<your id>";
    return;
  }
  const app = new AssessmentApp({
    baseUrl: params.get("api") ?? "",
    sessionId,
    judgeId,
    root,
  });
  void app.start();
}

mount();
