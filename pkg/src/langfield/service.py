"""HTTP service exposing rendering and open-vocabulary querying.

Stdlib-only: a ThreadingHTTPServer over an immutable checkpoint snapshot.
Rendered views are cached keyed by (view id, checkpoint hash); query rasters
are content-addressed, so identical requests return byte-identical bytes.
Text is resolved to vectors either by a named-vector vocabulary file
(synthetic mode) or by forwarding to an embedding-provider service.
"""

import hashlib
import io
import json
import logging
import os
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .field import load_checkpoint
from .query import (DEFAULT_CANONICALS, DEFAULT_TEMPERATURE, QueryContext,
                    render_relevancy_map, select_scale)
from .rasters import overlay_rgba
from .render import RenderConfig, render_view
from .scene import load_dataset

log = logging.getLogger("langfield.service")


_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _png_bytes(rgb01: np.ndarray) -> bytes:
    arr = (np.clip(rgb01, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr[::-1]).save(buf, format="PNG")
    return buf.getvalue()


def _rgba_png_bytes(rgba: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgba[::-1], mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def _load_vocabulary(path):
    """Named vectors for synthetic text mode. Accepts either a flat
    {name: [floats]} mapping or the fixture layout with positives /
    negatives / canonicals sections."""
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    vocab = {}
    sections = [doc[k] for k in ("positives", "negatives", "canonicals")
                if isinstance(doc.get(k), dict)]
    if not sections:
        sections = [doc]
    for section in sections:
        for name, vec in section.items():
            if isinstance(vec, list):
                vocab[name] = np.asarray(vec, dtype=np.float64)
    return vocab


class ServiceState:
    """Immutable checkpoint snapshot plus guarded caches."""

    def __init__(self, checkpoint_path, manifest_path, provider=None,
                 vocabulary_path=None, sweep_stride=4,
                 render_config=None, static_dir=None):
        self.params, self.checkpoint_step = load_checkpoint(checkpoint_path)
        self.static_dir = os.path.realpath(static_dir) if static_dir else None
        if self.static_dir and not os.path.isdir(self.static_dir):
            raise NotADirectoryError(
                f"static dir not found: {self.static_dir}")
        with open(checkpoint_path, "rb") as fh:
            self.checkpoint_hash = hashlib.sha256(fh.read()).hexdigest()[:12]
        self.dataset = load_dataset(manifest_path)
        self.provider = provider
        self.vocabulary = _load_vocabulary(vocabulary_path)
        self.sweep_stride = sweep_stride
        self.render_config = render_config or RenderConfig()

        from .cli import view_table
        self.views = view_table(self.dataset)

        self._lock = threading.Lock()
        self._render_cache = {}
        self._rasters = {}
        self._query_cache = {}

    # -- text resolution ----------------------------------------------------

    def resolve_text(self, text: str) -> np.ndarray:
        if text in self.vocabulary:
            return self.vocabulary[text]
        if self.provider:
            from .cli import fetch_provider_embeddings
            return fetch_provider_embeddings(self.provider, [text])[0]
        raise ServiceError(
            400, f"no embedding available for text {text!r}: service has "
            "no provider and the vocabulary does not contain it")

    def resolve_many(self, texts) -> np.ndarray:
        if all(t in self.vocabulary for t in texts):
            return np.stack([self.vocabulary[t] for t in texts])
        if self.provider:
            from .cli import fetch_provider_embeddings
            return fetch_provider_embeddings(self.provider, list(texts))
        missing = [t for t in texts if t not in self.vocabulary]
        raise ServiceError(
            400, f"no embedding available for canonicals {missing!r}")

    # -- caches -------------------------------------------------------------

    def rendered_view_png(self, view_id: str) -> bytes:
        key = (view_id, self.checkpoint_hash)
        with self._lock:
            cached = self._render_cache.get(key)
        if cached is not None:
            return cached
        frame = self.views[view_id]
        out = render_view(self.params, frame, self.render_config)
        png = _png_bytes(out.color)
        with self._lock:
            self._render_cache[key] = png
        return png

    def store_raster(self, payload: bytes, suffix: str, ctype: str) -> str:
        rid = hashlib.sha256(payload).hexdigest()[:24] + suffix
        with self._lock:
            self._rasters[rid] = (ctype, payload)
        return rid

    def get_raster(self, rid: str):
        with self._lock:
            return self._rasters.get(rid)

    def static_file(self, url_path: str):
        """(content type, bytes) for a file under static_dir, or None. Paths
        resolving outside the directory are treated as absent."""
        if self.static_dir is None:
            return None
        rel = url_path.lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(self.static_dir, rel))
        if not full.startswith(self.static_dir + os.sep) \
                and full != self.static_dir:
            return None
        if not os.path.isfile(full):
            return None
        ctype = _STATIC_TYPES.get(os.path.splitext(full)[1].lower(),
                                  "application/octet-stream")
        with open(full, "rb") as fh:
            return ctype, fh.read()

    # -- query --------------------------------------------------------------

    def run_query(self, doc: dict) -> dict:
        if not isinstance(doc, dict):
            raise ServiceError(400, "request body must be a JSON object")
        view_id = doc.get("view")
        if view_id is None:
            raise ServiceError(400, "missing 'view'")
        view_id = str(view_id)
        if view_id not in self.views:
            raise ServiceError(404, f"unknown view id {view_id!r}")

        if "embedding" in doc and doc["embedding"] is not None:
            phi_query = np.asarray(doc["embedding"], dtype=np.float64)
            query_label = doc.get("text") or "embedding"
        elif "text" in doc and doc["text"] is not None:
            if not str(doc["text"]).strip():
                raise ServiceError(400, "empty query text")
            phi_query = self.resolve_text(str(doc["text"]))
            query_label = str(doc["text"])
        else:
            raise ServiceError(400, "pass 'text' or 'embedding'")
        if phi_query.ndim != 1 or phi_query.shape[0] != self.params.config.embed_dim:
            raise ServiceError(
                400, f"embedding must have dim {self.params.config.embed_dim}")
        norm = float(np.linalg.norm(phi_query))
        if not np.isfinite(norm) or norm < 1e-8:
            raise ServiceError(400, "embedding must be a nonzero vector")
        phi_query = phi_query / norm

        canon_names = doc.get("canonicals") or list(DEFAULT_CANONICALS)
        if (not isinstance(canon_names, list)
                or not all(isinstance(c, str) for c in canon_names)
                or not canon_names):
            raise ServiceError(400, "'canonicals' must be a list of strings")
        canon = self.resolve_many(canon_names)
        canon = canon / np.linalg.norm(canon, axis=1, keepdims=True)

        temperature = float(doc.get("temperature", DEFAULT_TEMPERATURE))
        if not np.isfinite(temperature) or temperature <= 0:
            raise ServiceError(400, "'temperature' must be positive")
        scale = doc.get("scale")
        if scale is not None:
            scale = float(scale)
            if not np.isfinite(scale) or scale <= 0:
                raise ServiceError(400, "'scale' must be positive")

        cache_key = json.dumps(
            {"view": view_id, "q": phi_query.tolist(), "c": canon.tolist(),
             "t": temperature, "s": scale, "ckpt": self.checkpoint_hash},
            sort_keys=True)
        with self._lock:
            cached = self._query_cache.get(cache_key)
        if cached is not None:
            return cached

        ctx = QueryContext(phi_query=phi_query, phi_canonicals=canon,
                           temperature=temperature, labels=tuple(canon_names))
        frame = self.views[view_id]
        scene_scale = self.dataset.scene_scale
        if scale is not None:
            rmap = render_relevancy_map(self.params, frame, ctx,
                                        scale / scene_scale,
                                        self.render_config,
                                        scale_source="manual")
            selected = scale
        else:
            selected, rmap = select_scale(self.params, frame, ctx,
                                          self.render_config,
                                          scene_scale=scene_scale,
                                          stride=self.sweep_stride)
            if self.sweep_stride != 1:
                rmap = render_relevancy_map(self.params, frame, ctx,
                                            selected / scene_scale,
                                            self.render_config)

        raster_bytes = np.ascontiguousarray(
            rmap.scores.astype("<f4")).tobytes()
        rid = self.store_raster(raster_bytes, ".f32",
                                "application/octet-stream")
        base = render_view(self.params, frame, self.render_config)
        rgba = overlay_rgba(base.color, rmap.scores, rmap.display, rmap.mask)
        oid = self.store_raster(_rgba_png_bytes(rgba), ".png", "image/png")

        h, w = rmap.scores.shape
        response = {"max_score": float(rmap.max_score),
                    "selected_scale": float(selected),
                    "scale_source": rmap.scale_source,
                    "query": query_label,
                    "view": view_id, "width": w, "height": h,
                    "raster_url": f"/rasters/{rid}",
                    "overlay_url": f"/rasters/{oid}"}
        with self._lock:
            self._query_cache[cache_key] = response
        return response

    def views_payload(self) -> dict:
        views = []
        for i, frame in enumerate(self.dataset.frames):
            intr = frame.intrinsics
            stem = next(k for k, v in self.views.items()
                        if v is frame and not k.isdigit())
            views.append({
                "id": stem, "index": i,
                "width": intr.width, "height": intr.height,
                "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
                "camera_to_world": [float(x) for x in
                                    frame.pose.camera_to_world.reshape(-1)]})
        return {"views": views, "checkpoint_step": self.checkpoint_step}


class _Handler(BaseHTTPRequestHandler):
    state: ServiceState = None

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send_json(self, status: int, doc: dict):
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, status: int, body: bytes, ctype: str):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        try:
            parsed = urlparse(self.path)
            if parsed.path == "/health":
                self._send_json(200, {
                    "status": "ok",
                    "checkpoint_step": self.state.checkpoint_step})
            elif parsed.path == "/views":
                self._send_json(200, self.state.views_payload())
            elif parsed.path == "/render":
                qs = parse_qs(parsed.query)
                if "view" not in qs:
                    raise ServiceError(400, "missing 'view' parameter")
                view_id = qs["view"][0]
                if view_id not in self.state.views:
                    raise ServiceError(404, f"unknown view id {view_id!r}")
                self._send_bytes(200, self.state.rendered_view_png(view_id),
                                 "image/png")
            elif parsed.path.startswith("/rasters/"):
                rid = parsed.path[len("/rasters/"):]
                entry = self.state.get_raster(rid)
                if entry is None:
                    raise ServiceError(404, f"unknown raster {rid!r}")
                self._send_bytes(200, entry[1], entry[0])
            else:
                entry = self.state.static_file(parsed.path)
                if entry is None:
                    raise ServiceError(404, f"no such endpoint {parsed.path!r}")
                self._send_bytes(200, entry[1], entry[0])
        except ServiceError as exc:
            self._send_json(exc.status, {"error": str(exc)})
        except Exception as exc:  # keep the server alive
            log.exception("GET %s failed", self.path)
            self._send_json(500, {"error": str(exc)})

    def do_POST(self):
        try:
            parsed = urlparse(self.path)
            if parsed.path != "/query":
                raise ServiceError(404, f"no such endpoint {parsed.path!r}")
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b""
            try:
                doc = json.loads(raw.decode("utf-8")) if raw else {}
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise ServiceError(400, "body is not valid JSON")
            self._send_json(200, self.state.run_query(doc))
        except ServiceError as exc:
            self._send_json(exc.status, {"error": str(exc)})
        except Exception as exc:
            log.exception("POST %s failed", self.path)
            self._send_json(500, {"error": str(exc)})


def make_server(state: ServiceState, host: str, port: int):
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def run_service(checkpoint_path, manifest_path, port, host="127.0.0.1",
                provider=None, vocabulary_path=None, sweep_stride=4,
                render_config=None, static_dir=None) -> int:
    state = ServiceState(checkpoint_path, manifest_path, provider=provider,
                         vocabulary_path=vocabulary_path,
                         sweep_stride=sweep_stride,
                         render_config=render_config,
                         static_dir=static_dir)
    try:
        server = make_server(state, host, port)
    except OSError as exc:
        import sys
        print(f"error: cannot bind {host}:{port} ({exc})", file=sys.stderr)
        return 2

    def _shutdown(signum, frame):
        log.info("signal %d, shutting down", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGINT, _shutdown)
    signal.signal(signal.SIGTERM, _shutdown)
    log.info("serving checkpoint step %d on http://%s:%d",
             state.checkpoint_step, host, port)
    print(f"listening on http://{host}:{port}", flush=True)
    server.serve_forever()
    server.server_close()
    return 0
