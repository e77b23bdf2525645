"""Command-line entry points: train, render, query, serve, make-fixture."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import fixture as fixture_mod
from .errors import LangfieldError
from .field import FieldConfig, load_checkpoint
from .pyramid import read_pyramid
from .query import (DEFAULT_CANONICALS, DEFAULT_TEMPERATURE, QueryContext,
                    render_relevancy_map, select_scale)
from .rasters import ensure_dir, save_overlay_png, write_raster
from .render import render_view
from .scene import load_dataset, save_png_rgb01
from .train import TrainConfig, train

log = logging.getLogger("langfield")


def _usage_error(message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(2)


def _runtime_error(message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(1)


def _resolve_manifest(path: str) -> str:
    if os.path.isdir(path):
        path = os.path.join(path, "transforms.json")
    if not os.path.exists(path):
        raise _usage_error(f"dataset manifest not found: {path}")
    return path


def _load_config_file(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise _usage_error(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise _usage_error(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise _usage_error(f"config file {path} must hold a JSON object")
    return doc


def view_table(dataset):
    """Stable view ids: image-file stem, with the frame index as an alias."""
    table = {}
    for i, frame in enumerate(dataset.frames):
        if frame.name:
            table[frame.name] = frame
        table[str(i)] = frame
    return table


def _lookup_view(dataset, view_id: str):
    table = view_table(dataset)
    if view_id not in table:
        known = sorted(k for k in table if not k.isdigit())
        raise _usage_error(
            f"unknown view id {view_id!r}; known views: {', '.join(known)}")
    return table[view_id]


def _load_vector_file(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise _usage_error(f"embedding file not found: {path}")
    if path.endswith(".npy"):
        vec = np.load(path)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            vec = np.asarray(json.load(fh), dtype=np.float64)
    return np.asarray(vec, dtype=np.float64)


def _normalize_rows(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms < 1e-8):
        raise _usage_error(f"{what} contains a zero vector")
    return mat / norms[:, None]


def fetch_provider_embeddings(provider: str, texts) -> np.ndarray:
    """POST the texts to the embedding provider; returns unit rows."""
    import urllib.error
    import urllib.request

    url = provider.rstrip("/") + "/embed"
    body = json.dumps({"texts": list(texts)}).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise _runtime_error(
            f"embedding provider {provider} unreachable ({exc}); "
            "pass --embedding-file to bypass the text encoder")
    emb = np.asarray(doc["embeddings"], dtype=np.float64)
    if emb.shape[0] != len(texts):
        raise _runtime_error(
            f"provider returned {emb.shape[0]} vectors for {len(texts)} texts")
    return _normalize_rows(emb, "provider embeddings")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    manifest = _resolve_manifest(args.dataset)
    if not os.path.exists(args.embeddings):
        raise _usage_error(f"embeddings file not found: {args.embeddings}")
    doc = _load_config_file(args.config)
    field_cfg = (FieldConfig.from_dict(doc["field"]) if "field" in doc
                 else FieldConfig())
    train_cfg = (TrainConfig.from_dict(doc["train"]) if "train" in doc
                 else TrainConfig())
    import dataclasses
    if args.max_steps is not None:
        train_cfg = dataclasses.replace(train_cfg, max_steps=args.max_steps)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, rng_seed=args.seed)

    dataset = load_dataset(manifest)
    pyramid = read_pyramid(args.embeddings, dataset.frames[0].intrinsics.width,
                           dataset.frames[0].intrinsics.height)
    trace_path = args.trace or args.out + ".trace.csv"
    ensure_dir(os.path.dirname(os.path.abspath(args.out)))
    train(dataset, pyramid, field_cfg, train_cfg,
          checkpoint_path=args.out, trace_path=trace_path, log=log.info)
    log.info("checkpoint written to %s", args.out)
    return 0


def _load_checkpoint_arg(path: str):
    if not os.path.exists(path):
        raise _usage_error(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_render(args) -> int:
    params, step = _load_checkpoint_arg(args.checkpoint)
    dataset = load_dataset(_resolve_manifest(args.dataset))
    frame = _lookup_view(dataset, args.view)
    render_cfg = _render_config_for(params, args)
    out = render_view(params, frame, render_cfg)
    ensure_dir(os.path.dirname(os.path.abspath(args.out)))
    save_png_rgb01(args.out, out.color)
    log.info("rendered view %s (checkpoint step %d) to %s",
             args.view, step, args.out)
    return 0


def _render_config_for(params, args):
    from .render import RenderConfig
    cfg = RenderConfig()
    doc = _load_config_file(getattr(args, "config", None))
    if "train" in doc and "render" in doc["train"]:
        cfg = RenderConfig(**{**doc["train"]["render"],
                              "bg_color": tuple(
                                  doc["train"]["render"].get(
                                      "bg_color", cfg.bg_color))})
    return cfg


def cmd_query(args) -> int:
    params, step = _load_checkpoint_arg(args.checkpoint)
    dataset = load_dataset(_resolve_manifest(args.dataset))
    frame = _lookup_view(dataset, args.view)
    render_cfg = _render_config_for(params, args)
    embed_dim = params.config.embed_dim

    if args.embedding_file:
        phi_query = _normalize_rows(
            _load_vector_file(args.embedding_file), "query embedding")[0]
        query_label = args.text or os.path.basename(args.embedding_file)
        if args.canonical_file:
            canon = _normalize_rows(_load_vector_file(args.canonical_file),
                                    "canonical embeddings")
            canon_labels = [f"canonical_{i}" for i in range(len(canon))]
        elif args.provider:
            canon = fetch_provider_embeddings(args.provider,
                                              list(DEFAULT_CANONICALS))
            canon_labels = list(DEFAULT_CANONICALS)
        else:
            raise _usage_error(
                "--embedding-file mode needs canonical vectors: pass "
                "--canonical-file or --provider")
    else:
        if not args.text:
            raise _usage_error("pass --text or --embedding-file")
        if not args.provider:
            raise _usage_error(
                "--text mode needs --provider (or use --embedding-file)")
        texts = [args.text] + list(DEFAULT_CANONICALS)
        emb = fetch_provider_embeddings(args.provider, texts)
        phi_query, canon = emb[0], emb[1:]
        query_label = args.text
        canon_labels = list(DEFAULT_CANONICALS)

    if phi_query.shape[0] != embed_dim:
        raise _usage_error(
            f"query embedding has dim {phi_query.shape[0]}, "
            f"checkpoint expects {embed_dim}")
    ctx = QueryContext(phi_query=phi_query, phi_canonicals=canon,
                       temperature=args.temperature, labels=tuple(canon_labels))

    scene_scale = dataset.scene_scale
    if args.scale is not None:
        if args.scale <= 0:
            raise _usage_error(f"--scale must be positive, got {args.scale}")
        rmap = render_relevancy_map(params, frame, ctx,
                                    args.scale / scene_scale, render_cfg,
                                    scale_source="manual")
        selected = args.scale
    else:
        selected, rmap = select_scale(params, frame, ctx, render_cfg,
                                      scene_scale=scene_scale,
                                      stride=args.sweep_stride)
        if args.sweep_stride != 1:
            rmap = render_relevancy_map(params, frame, ctx,
                                        selected / scene_scale, render_cfg)

    ensure_dir(args.out_dir)
    sidecar = {"query": query_label, "view": args.view,
               "selected_scale": float(selected),
               "scale_source": rmap.scale_source,
               "max_score": float(rmap.max_score),
               "canonicals": list(canon_labels),
               "temperature": float(args.temperature),
               "checkpoint_step": int(step)}
    raster_path = os.path.join(args.out_dir, "relevancy.f32")
    write_raster(raster_path, rmap.scores, sidecar)
    base = render_view(params, frame, render_cfg)
    save_png_rgb01(os.path.join(args.out_dir, "base.png"), base.color)
    save_overlay_png(os.path.join(args.out_dir, "overlay.png"), base.color,
                     rmap.scores, rmap.display, rmap.mask)
    with open(os.path.join(args.out_dir, "query.json"), "w",
              encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    print(json.dumps({"max_score": sidecar["max_score"],
                      "selected_scale": sidecar["selected_scale"],
                      "scale_source": sidecar["scale_source"]}))
    return 0


def cmd_serve(args) -> int:
    from .service import run_service
    if not os.path.exists(args.checkpoint):
        raise _usage_error(f"checkpoint not found: {args.checkpoint}")
    manifest = _resolve_manifest(args.dataset)
    params, _ = load_checkpoint(args.checkpoint)
    if args.static_dir and not os.path.isdir(args.static_dir):
        raise _usage_error(f"static dir not found: {args.static_dir}")
    return run_service(checkpoint_path=args.checkpoint, manifest_path=manifest,
                       port=args.port, host=args.host, provider=args.provider,
                       vocabulary_path=args.vocabulary,
                       sweep_stride=args.sweep_stride,
                       render_config=_render_config_for(params, args),
                       static_dir=args.static_dir)


def cmd_make_fixture(args) -> int:
    info = fixture_mod.make_fixture(args.out, n_train=args.n_train,
                                    n_eval=args.n_eval,
                                    max_steps=args.max_steps,
                                    seed=args.seed or 0)
    print(json.dumps(info, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_global_flags(parser, suppress=False):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d,
                        help="seed for all named RNG streams")
    parser.add_argument("--config", default=d,
                        help="JSON config with 'field' and 'train' sections")
    parser.add_argument("--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="langfield",
        description="Train, render, and query volume-rendered language fields.")
    _add_global_flags(parser)
    # accepted before or after the subcommand; the suppressed defaults keep
    # the subparser pass from clobbering values parsed by the main parser
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(*a, **kw):
        p = sub.add_parser(*a, **kw)
        _add_global_flags(p, suppress=True)
        return p

    p = add_parser("train", help="fit a field to a dataset")
    p.add_argument("--dataset", required=True,
                   help="dataset directory or transforms.json path")
    p.add_argument("--embeddings", required=True,
                   help="embedding container file")
    p.add_argument("--out", default="checkpoint.lerfckpt")
    p.add_argument("--trace", default=None, help="loss CSV path")
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = add_parser("render", help="render an RGB view from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--out", default="render.png")
    p.set_defaults(func=cmd_render)

    p = add_parser("query", help="render a relevancy map for a query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--view", required=True)
    p.add_argument("--text", default=None)
    p.add_argument("--embedding-file", default=None,
                   help=".npy or JSON vector; bypasses the text provider")
    p.add_argument("--canonical-file", default=None,
                   help=".npy or JSON matrix of canonical vectors")
    p.add_argument("--provider", default=None,
                   help="base URL of a text-embedding service")
    p.add_argument("--scale", type=float, default=None,
                   help="fixed physical scale in meters; skips selection")
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--sweep-stride", type=int, default=4,
                   help="pixel stride for the scale-selection sweep")
    p.add_argument("--out-dir", default="query_out")
    p.set_defaults(func=cmd_query)

    p = add_parser("serve", help="serve rendering and querying over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--provider", default=None)
    p.add_argument("--vocabulary", default=None,
                   help="JSON with named query/canonical vectors "
                        "(synthetic text mode)")
    p.add_argument("--sweep-stride", type=int, default=4)
    p.add_argument("--static-dir", default=None,
                   help="serve files from this directory at /, e.g. a built "
                        "browser UI")
    p.set_defaults(func=cmd_serve)

    p = add_parser("make-fixture",
                       help="generate the synthetic two-box scene")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-eval", type=int, default=3)
    p.add_argument("--max-steps", type=int, default=3000)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except LangfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
