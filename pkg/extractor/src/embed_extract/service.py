"""Text-embedding HTTP service: POST /embed {"texts": [...]} returns unit
vectors, deterministic for a fixed encoder (or seed in synthetic mode)."""

import json
import logging
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

log = logging.getLogger("embed_extract.service")


class _Handler(BaseHTTPRequestHandler):
    embedder = None
    encoder_name = "synthetic"
    embed_dim = 0

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send_json(self, status: int, doc: dict):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/health":
            self._send_json(200, {"status": "ok",
                                  "encoder": self.encoder_name,
                                  "dim": self.embed_dim})
        else:
            self._send_json(404, {"error": f"no such endpoint {self.path!r}"})

    def do_POST(self):
        if self.path != "/embed":
            self._send_json(404, {"error": f"no such endpoint {self.path!r}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b""
            try:
                doc = json.loads(raw.decode("utf-8")) if raw else {}
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._send_json(400, {"error": "body is not valid JSON"})
                return
            texts = doc.get("texts") if isinstance(doc, dict) else None
            if not isinstance(texts, list) or not texts:
                self._send_json(400, {"error": "'texts' must be a non-empty "
                                               "list of strings"})
                return
            for t in texts:
                if not isinstance(t, str) or not t.strip():
                    self._send_json(400, {"error": "empty text"})
                    return
            emb = self.embedder.embed_texts(texts)
            self._send_json(200, {"embeddings": emb.tolist(),
                                  "dim": int(emb.shape[1]),
                                  "encoder": self.encoder_name})
        except Exception as exc:  # keep the server alive
            log.exception("POST /embed failed")
            self._send_json(500, {"error": str(exc)})


def run_text_service(embedder, port: int, host: str = "127.0.0.1",
                     encoder_name: str = "synthetic") -> int:
    probe = embedder.embed_texts(["object"])
    handler = type("BoundHandler", (_Handler,), {
        "embedder": embedder,
        "encoder_name": encoder_name,
        "embed_dim": int(probe.shape[1]),
    })
    try:
        server = ThreadingHTTPServer((host, port), handler)
    except OSError as exc:
        import sys
        print(f"error: cannot bind {host}:{port} ({exc})", file=sys.stderr)
        return 2

    def _shutdown(signum, frame):
        log.info("signal %d, shutting down", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _shutdown)
    signal.signal(signal.SIGTERM, _shutdown)
    print(f"listening on http://{host}:{port}", flush=True)
    server.serve_forever()
    server.server_close()
    return 0
