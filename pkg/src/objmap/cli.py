"""Command-line front end: ``objmap <command> [--config FILE] [flags]``.

Exit status is 0 on success, 2 for configuration errors and 1 when a
pipeline stage fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .dataset import DatasetError
from .pipeline import (ConfigError, PipelineError, load_config, run_all, run_cluster, run_eval_retrieval,
                       run_eval_seg, run_extract_surface, run_query_object, run_query_part, run_render,
                       run_train, write_json)
from .synthetic import PRESETS, SceneError, generate_synthetic_scene
from .tensor_io import TensorFormatError

log = logging.getLogger("objmap")

COMMANDS = ("gen-synthetic", "cluster", "train", "render", "extract-surface", "query-object",
            "query-part", "eval-seg", "eval-retrieval", "run-all")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--dataset", help="dataset directory (overrides config)")
    common.add_argument("--output", "-o", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="global seed (default 0)")
    common.add_argument("--threads", type=int, help="worker thread cap")
    common.add_argument("--steps", type=int, help="training steps per object")
    common.add_argument("--theta-mask", type=float, help="mask graph edge threshold")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config entry, e.g. train.lr=0.005")
    common.add_argument("--dump-similarity", action="store_true", help="write the similarity matrix")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="objmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a generated dataset")
    g.add_argument("--preset", choices=sorted(PRESETS), default="three_boxes")
    g.add_argument("--scene", help="scene description JSON (instead of a preset)")
    g.add_argument("--views", type=int, help="views for presets that take a view count")

    sub.add_parser("cluster", parents=[common], help="group masks into objects")
    sub.add_parser("train", parents=[common], help="train one field per object")
    r = sub.add_parser("render", parents=[common], help="render color/depth/feature images")
    r.add_argument("--frame", type=int, default=0, help="frame index whose camera is used")
    r.add_argument("--samples", type=int, default=128)
    sub.add_parser("extract-surface", parents=[common], help="marching-cubes surfaces")
    q = sub.add_parser("query-object", parents=[common], help="rank objects for query embeddings")
    q.add_argument("--clip", help="OBNT file of VLM query embeddings (one per row)")
    q.add_argument("--cap", help="OBNT file of caption query embeddings (one per row)")
    qp = sub.add_parser("query-part", parents=[common], help="score surface points of one object")
    qp.add_argument("--object", type=int, required=True)
    qp.add_argument("--query", required=True, help="OBNT file of query embeddings")
    es = sub.add_parser("eval-seg", parents=[common], help="label-argmax segmentation metrics")
    es.add_argument("--labels", help="OBNT label embeddings (default: dataset labels)")
    es.add_argument("--gt-points", help="OBNT (N, 3) ground-truth points")
    es.add_argument("--gt-labels", help="OBNT (N,) ground-truth labels")
    es.add_argument("--frames", type=int, nargs="*", default=[], help="frame indices for 2D evaluation")
    er = sub.add_parser("eval-retrieval", parents=[common], help="recall@k of object retrieval")
    er.add_argument("--clip")
    er.add_argument("--cap")
    er.add_argument("--gt", help="JSON list: ground-truth object id(s) per query")
    sub.add_parser("run-all", parents=[common], help="cluster, train, surfaces and evaluation")
    return p


def _config(args):
    over = list(args.set)
    for flag, key in (("dataset", "dataset"), ("output", "output"), ("seed", "seed"),
                      ("threads", "threads"), ("steps", "train.steps"),
                      ("theta_mask", "similarity.theta_mask")):
        val = getattr(args, flag)
        if val is not None:
            over.append(f"{key}={json.dumps(val)}")
    return load_config(args.config, over)


def _gen_synthetic(args, cfg) -> dict:
    if args.scene:
        try:
            scene = json.loads(Path(args.scene).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"scene file {args.scene}: {exc}") from exc
    else:
        kw = {"n_views": args.views} if args.views else {}
        try:
            scene = PRESETS[args.preset](**kw)
        except TypeError as exc:
            raise ConfigError(f"preset {args.preset} does not take --views") from exc
    target = Path(args.dataset or cfg.dataset or cfg.output)
    try:
        generate_synthetic_scene(scene, target, seed=cfg.seed)
    except SceneError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = json.loads((target / "manifest.json").read_text(encoding="utf-8"))
    n_masks = sum(len(f.get("instances", {}).get("gt_ids", [])) for f in manifest["frames"])
    result = {"stage": "gen-synthetic", "n_frames": len(manifest["frames"]), "n_masks": n_masks,
              "n_objects": len(scene["objects"])}
    write_json(target / "result.json", result)
    return result


def run(command: str, args) -> dict:
    cfg = _config(args)
    if command == "gen-synthetic":
        return _gen_synthetic(args, cfg)
    if command == "cluster":
        return run_cluster(cfg, args.dump_similarity)
    if command == "train":
        return run_train(cfg)
    if command == "render":
        return run_render(cfg, args.frame, args.samples)
    if command == "extract-surface":
        return run_extract_surface(cfg)
    if command == "query-object":
        return run_query_object(cfg, args.clip, args.cap)
    if command == "query-part":
        return run_query_part(cfg, args.object, args.query)
    if command == "eval-seg":
        return run_eval_seg(cfg, args.labels, args.gt_points, args.gt_labels, args.frames)
    if command == "eval-retrieval":
        return run_eval_retrieval(cfg, args.clip, args.cap, args.gt)
    if command == "run-all":
        return run_all(cfg, args.dump_similarity)
    raise ConfigError(f"unknown command {command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args.command, args)
    except ConfigError as exc:
        print(f"objmap {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, DatasetError, TensorFormatError, ValueError, RuntimeError,
            FileNotFoundError) as exc:
        print(f"objmap {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
