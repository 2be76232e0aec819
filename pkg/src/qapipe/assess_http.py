"""Local HTTP transport for the assessment service.

JSON API (all responses application/json):
  GET  /api/health
  GET  /api/sessions
  POST /api/sessions                       create-session payload
  GET  /api/sessions/{sid}/next?judge=J
  POST /api/sessions/{sid}/judgments       {judge_id, question_id, verdict}
  GET  /api/sessions/{sid}/progress[?judge=J]
  GET  /api/sessions/{sid}/results

With a static directory configured, anything outside /api/ serves the built
assessment UI (index.html fallback). CORS is open so a dev-served frontend
can talk to it.
"""
from __future__ import annotations

import json
import mimetypes
import re
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from .assess import AssessmentService

_SESSION_ROUTE = re.compile(r"^/api/sessions/([^/]+)/(next|judgments|progress|results)$")


def make_server(service: AssessmentService, host: str = "127.0.0.1",
                port: int = 8707,
                static_dir: Optional[str] = None) -> ThreadingHTTPServer:
    static_root = Path(static_dir).resolve() if static_dir else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, payload: dict | bytes,
                  content_type: str = "application/json"):
            body = payload if isinstance(payload, bytes) else \
                json.dumps(payload, ensure_ascii=False).encode()
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()
            self.wfile.write(body)

        def _json_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length))

        def do_OPTIONS(self):
            self._send(204, b"", "text/plain")

        def do_GET(self):
            try:
                self._route_get()
            except KeyError as e:
                self._send(404, {"error": str(e)})
            except ValueError as e:
                self._send(400, {"error": str(e)})
            except Exception as e:  # pragma: no cover - defensive
                self._send(500, {"error": str(e)})

        def do_POST(self):
            try:
                self._route_post()
            except KeyError as e:
                self._send(404, {"error": str(e)})
            except ValueError as e:
                self._send(400, {"error": str(e)})
            except Exception as e:  # pragma: no cover - defensive
                self._send(500, {"error": str(e)})

        def _route_get(self):
            url = urlparse(self.path)
            query = {k: v[0] for k, v in parse_qs(url.query).items()}
            if url.path == "/api/health":
                return self._send(200, {"ok": True})
            if url.path == "/api/sessions":
                return self._send(200, {"sessions": sorted(service.sessions)})
            match = _SESSION_ROUTE.match(url.path)
            if match:
                sid, action = match.groups()
                if action == "next":
                    judge = query.get("judge", "")
                    return self._send(200, service.next_item(sid, judge))
                if action == "progress":
                    return self._send(200, service.progress(sid, query.get("judge")))
                if action == "results":
                    return self._send(200, service.results(sid))
                raise KeyError(f"no GET route for {action}")
            if static_root is not None and not url.path.startswith("/api/"):
                return self._serve_static(url.path)
            raise KeyError(f"unknown path: {url.path}")

        def _route_post(self):
            url = urlparse(self.path)
            if url.path == "/api/sessions":
                body = self._json_body()
                sid = service.create_session(
                    questions=body["questions"],
                    answers_a=body["answers_a"],
                    answers_b=body["answers_b"],
                    k=int(body["k"]),
                    seed=int(body.get("seed", 0)),
                    condition_a=body.get("condition_a", "A"),
                    condition_b=body.get("condition_b", "B"),
                    session_id=body.get("session_id"),
                    shuffle_per_judge=bool(body.get("shuffle_per_judge", True)),
                )
                return self._send(200, {"session_id": sid})
            match = _SESSION_ROUTE.match(url.path)
            if match and match.group(2) == "judgments":
                body = self._json_body()
                ack = service.submit_judgment(
                    match.group(1),
                    body.get("judge_id", ""),
                    body.get("question_id", ""),
                    body.get("verdict", ""),
                )
                return self._send(200, ack)
            raise KeyError(f"unknown path: {url.path}")

        def _serve_static(self, path: str):
            rel = path.lstrip("/") or "index.html"
            target = (static_root / rel).resolve()
            if not str(target).startswith(str(static_root)) or not target.is_file():
                target = static_root / "index.html"
                if not target.is_file():
                    raise KeyError(f"not found: {path}")
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self._send(200, target.read_bytes(), ctype)

    return ThreadingHTTPServer((host, port), Handler)
