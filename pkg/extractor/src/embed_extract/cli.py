import argparse
import json
import logging
import os
import sys

from .config import ExtractorConfig
from .extract import extract_dino, extract_pyramids, load_dataset_frames
from .layout import LayoutMismatch, check_layout_manifest, layout_summary
from .synthetic import SyntheticVocabulary

log = logging.getLogger("embed_extract")

_PYRAMID_KEYS = ("s_min", "s_max", "n_levels", "overlap",
                 "embed_dim", "dino_dim")
# synthetic mode targets the trainer's synthetic scene, whose container
# carries 8-dim embeddings and 4-dim feature maps
_SYNTH_DIMS = {"embed_dim": 8, "dino_dim": 4}


class _UsageError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="embed multiscale image crops for field training and "
                    "serve text embeddings")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_dataset=True):
        if with_dataset:
            p.add_argument("--dataset", required=True,
                           help="directory holding transforms.json")
        p.add_argument("--synthetic", action="store_true",
                       help="deterministic hash embedder, no model download")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--region-names", default=None,
                       help="comma-separated region labels for synthetic mode")
        p.add_argument("--layout-manifest", default=None,
                       help="trainer-produced lattice manifest to cross-check "
                            "(default: <dataset>/layout.json when present)")
        p.add_argument("--encoder", default=None)
        p.add_argument("--variant", default=None)
        p.add_argument("--device", default=None)
        for key in _PYRAMID_KEYS:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, type=float if "s_" in key or key == "overlap"
                           else int, default=None)

    p = sub.add_parser("extract", help="write the embedding container")
    add_common(p)
    p.add_argument("--out", default="embeddings.lerf")
    p.add_argument("--dino-stride", type=int, default=None)

    p = sub.add_parser("layout", help="export this tool's crop lattice")
    add_common(p)
    p.add_argument("--out", default=None, help="JSON path (default stdout)")

    p = sub.add_parser("serve-text", help="HTTP text-embedding service")
    add_common(p, with_dataset=False)
    p.add_argument("--port", type=int, default=8094)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def _load_manifest(args) -> dict:
    path = args.layout_manifest
    if path is None and getattr(args, "dataset", None):
        candidate = os.path.join(args.dataset, "layout.json")
        if os.path.exists(candidate):
            path = candidate
    if path is None:
        return {}
    if not os.path.exists(path):
        raise _UsageError(f"layout manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["_path"] = path
    return doc


def resolve_config(args, manifest: dict) -> ExtractorConfig:
    """Explicit flags beat the manifest, which beats the defaults."""
    values = {}
    for key in _PYRAMID_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = int(flag) if key in ("n_levels", "embed_dim",
                                               "dino_dim") else float(flag)
        elif key in manifest:
            values[key] = manifest[key]
        elif args.synthetic and key in _SYNTH_DIMS:
            values[key] = _SYNTH_DIMS[key]
    if getattr(args, "dino_stride", None) is not None:
        values["dino_stride"] = args.dino_stride
    for key in ("encoder", "variant", "device"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    values["synthetic"] = bool(args.synthetic)
    values["seed"] = args.seed
    try:
        return ExtractorConfig(**values)
    except ValueError as exc:
        raise _UsageError(str(exc))


def resolve_region_names(args, manifest: dict) -> list:
    if args.region_names:
        names = [n.strip() for n in args.region_names.split(",") if n.strip()]
        if not names:
            raise _UsageError("--region-names is empty")
        return names
    if "region_names" in manifest:
        return list(manifest["region_names"])
    raise _UsageError(
        "synthetic mode needs region labels: pass --region-names or a "
        "--layout-manifest that carries them")


def build_embedder(config: ExtractorConfig, args, manifest: dict):
    if config.synthetic:
        names = resolve_region_names(args, manifest)
        return SyntheticVocabulary(names, embed_dim=config.embed_dim,
                                   dino_dim=config.dino_dim, seed=config.seed)
    from .encoders import get_embedder
    return get_embedder(config)


def cmd_extract(args) -> int:
    manifest = _load_manifest(args)
    config = resolve_config(args, manifest)
    info = load_dataset_frames(args.dataset)
    if manifest:
        check_layout_manifest(config, info["width"], info["height"],
                              manifest["_path"])
        log.info("lattice matches manifest %s", manifest["_path"])
    embedder = build_embedder(config, args, manifest)
    path = extract_pyramids(args.dataset, config, embedder, out_path=args.out)
    extract_dino(args.dataset, config, embedder, path)
    print(json.dumps({"out": path, "frames": len(info["frames"]),
                      "n_levels": config.n_levels,
                      "embed_dim": config.embed_dim,
                      "dino_dim": config.dino_dim}))
    return 0


def cmd_layout(args) -> int:
    manifest = _load_manifest(args)
    config = resolve_config(args, manifest)
    info = load_dataset_frames(args.dataset)
    doc = layout_summary(config, info["width"], info["height"])
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve_text(args) -> int:
    manifest = _load_manifest(args)
    config = resolve_config(args, manifest)
    embedder = build_embedder(config, args, manifest)
    name = "synthetic" if config.synthetic else config.encoder
    from .service import run_text_service
    return run_text_service(embedder, args.port, host=args.host,
                            encoder_name=name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"extract": cmd_extract, "layout": cmd_layout,
                "serve-text": cmd_serve_text}
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, LayoutMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
