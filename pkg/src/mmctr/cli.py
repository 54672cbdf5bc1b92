"""Command-line workflow: generate, train, eval, topk, selftest.

Exit codes: 0 success, 1 usage/config error, 2 runtime error. Diagnostics
go to stderr; contract output (epoch lines, metrics, rankings) to stdout.
All randomness flows from a single --seed through named sub-streams.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import selfcheck
from .data import (
    SyntheticTreeSpec,
    generate_tree_dataset,
    load_interactions,
    split_records,
    write_edges,
    write_interactions,
)
from .errors import ConfigError, MmctrError
from .geometry import ManifoldKind, ManifoldSpec
from .model import ModelConfig
from .optim import OptimizerConfig, UpdateMode
from .serving import batch_topk, format_ranking
from .trainer import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


DEFAULT_CONFIG = {
    "seed": 42,
    "deterministic": True,
    "epochs": 10,
    "batch_size": 4096,
    "eval_every": 1,
    "optimizer": {"learning_rate": 0.3, "ball_eps": 1e-5, "grad_clip": None},
    "model": {
        "manifolds": [
            {"kind": "euclidean", "dim": 4, "curvature": 0.0},
            {"kind": "poincare_ball", "dim": 4, "curvature": 1.0},
        ],
        "negatives_per_positive": 1,
        "init_scale": 0.01,
        "update_mode": "riemannian",
    },
    "data": {"train": None, "eval": None, "test_fraction": 0.1},
    "checkpoint": "checkpoint.json",
}


@dataclass
class RunSettings:
    train_cfg: TrainConfig
    train_path: str | None
    eval_path: str | None
    test_fraction: float
    checkpoint_path: str


def _merge_strict(base, override, path="$"):
    """Replace base values by override values, rejecting unknown keys."""
    if not isinstance(override, dict):
        raise ConfigError(f"config section {path} must be an object")
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path}.{key}")
        if isinstance(base[key], dict) and key != "manifolds":
            out[key] = _merge_strict(base[key], val, f"{path}.{key}")
        else:
            out[key] = val
    return out


def _manifold_from(obj, path) -> ManifoldSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"config key {path} must be an object")
    extra = set(obj) - {"kind", "dim", "curvature"}
    if extra:
        raise ConfigError(f"unknown config key {path}.{sorted(extra)[0]}")
    if "kind" not in obj or "dim" not in obj:
        raise ConfigError(f"config key {path} needs 'kind' and 'dim'")
    try:
        kind = ManifoldKind(obj["kind"])
    except ValueError:
        raise ConfigError(
            f"config key {path}.kind must be 'euclidean' or 'poincare_ball'"
        ) from None
    return ManifoldSpec(kind, obj["dim"], float(obj.get("curvature", 0.0)))


def build_settings(config_path=None, overrides=None) -> RunSettings:
    doc = DEFAULT_CONFIG
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                user_doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from None
        doc = _merge_strict(doc, user_doc)
    overrides = overrides or {}
    if overrides.get("seed") is not None:
        doc["seed"] = overrides["seed"]
    if overrides.get("data") is not None:
        doc["data"]["train"] = overrides["data"]
    if overrides.get("checkpoint") is not None:
        doc["checkpoint"] = overrides["checkpoint"]

    manifolds_doc = doc["model"]["manifolds"]
    if not isinstance(manifolds_doc, list) or not manifolds_doc:
        raise ConfigError("config key $.model.manifolds must be a non-empty list")
    manifolds = tuple(
        _manifold_from(m, f"$.model.manifolds[{i}]") for i, m in enumerate(manifolds_doc)
    )
    try:
        model_cfg = ModelConfig(
            manifolds=manifolds,
            negatives_per_positive=doc["model"]["negatives_per_positive"],
            init_scale=doc["model"]["init_scale"],
            update_mode=UpdateMode(doc["model"]["update_mode"]),
            seed=doc["seed"],
        )
    except ValueError:
        raise ConfigError(
            "config key $.model.update_mode must be 'riemannian' or 'tangent_origin'"
        ) from None
    opt = doc["optimizer"]
    opt_cfg = OptimizerConfig(
        learning_rate=opt["learning_rate"],
        ball_eps=opt["ball_eps"],
        grad_clip=opt["grad_clip"],
    )
    train_cfg = TrainConfig(
        epochs=doc["epochs"],
        batch_size=doc["batch_size"],
        optimizer=opt_cfg,
        model=model_cfg,
        eval_every=doc["eval_every"],
        deterministic=bool(doc["deterministic"]),
    )
    frac = doc["data"]["test_fraction"]
    if not isinstance(frac, (int, float)) or not 0 <= frac < 1:
        raise ConfigError("config key $.data.test_fraction must be in [0, 1)")
    return RunSettings(
        train_cfg=train_cfg,
        train_path=doc["data"]["train"],
        eval_path=doc["data"]["eval"],
        test_fraction=float(frac),
        checkpoint_path=doc["checkpoint"],
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(args) -> int:
    spec = SyntheticTreeSpec(
        depth=args.depth,
        branching=args.branching,
        users_per_leaf=args.users_per_leaf,
        click_noise=args.noise,
        seed=args.seed,
    )
    records, edges = generate_tree_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(records, out / "interactions.csv")
    write_edges(edges, out / "edges.csv")
    print(f"wrote {len(records)} records and {len(edges)} edges to {out}")
    return 0


def _cmd_train(args) -> int:
    settings = build_settings(
        args.config,
        {"seed": args.seed, "data": args.data, "checkpoint": args.checkpoint},
    )
    if settings.train_path is None:
        raise UsageError("no training data: pass --data or set data.train in the config")
    records = load_interactions(settings.train_path)
    if settings.eval_path is not None:
        train_records, eval_records = records, load_interactions(settings.eval_path)
    elif settings.test_fraction > 0:
        train_records, eval_records = split_records(
            records, settings.test_fraction, settings.train_cfg.model.seed
        )
    else:
        train_records, eval_records = records, None
    ckpt = train(settings.train_cfg, train_records, eval_records)
    out_path = args.checkpoint or settings.checkpoint_path
    save_checkpoint(ckpt, out_path)
    print(f"checkpoint written to {out_path}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = load_interactions(args.data)
    metrics = evaluate(ckpt, records)
    print(f"auc={metrics.auc:.6f} logloss={metrics.logloss:.6f}")
    return 0


def _cmd_topk(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rankings = batch_topk(ckpt, args.user, args.k, threads=args.threads)
    for ranked in rankings:
        for line in format_ranking(ranked):
            print(line)
    return 0


def _cmd_selftest(args) -> int:
    results = selfcheck.run_all(args.seed)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
        failed += 0 if res.passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mmctr", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p_gen = sub.add_parser("generate", help="write a synthetic tree click log")
    p_gen.add_argument("--depth", type=int, default=6)
    p_gen.add_argument("--branching", type=int, default=3)
    p_gen.add_argument("--users-per-leaf", type=int, default=20)
    p_gen.add_argument("--noise", type=float, default=0.1)
    p_gen.add_argument("--seed", type=int, default=42)
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=_cmd_generate)

    p_train = sub.add_parser("train", help="train a model and save a checkpoint")
    p_train.add_argument("--config", default=None, help="JSON run config")
    p_train.add_argument("--data", default=None, help="training interactions CSV")
    p_train.add_argument("--checkpoint", default=None, help="checkpoint output path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--threads", type=int, default=1)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a data file")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_topk = sub.add_parser("topk", help="top-K ads for one or more users")
    p_topk.add_argument("--checkpoint", required=True)
    p_topk.add_argument("--user", action="append", required=True,
                        help="user id (repeatable)")
    p_topk.add_argument("--k", type=int, default=10)
    p_topk.add_argument("--threads", type=int, default=1)
    p_topk.set_defaults(func=_cmd_topk)

    p_self = sub.add_parser("selftest", help="run the invariant suite")
    p_self.add_argument("--seed", type=int, default=42)
    p_self.set_defaults(func=_cmd_selftest)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (MmctrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
