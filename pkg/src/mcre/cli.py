"""Command-line surface: synth, featurize, train, eval, ablate.

Exit codes: 0 success, 1 runtime error, 2 usage error.  `MCRE_SEED` and
`MCRE_EMBED_URL` provide environment defaults; flags override both.
Every output directory receives a `run.json` with the resolved
configuration, its hash, and artifact versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import SCHEMA_VERSION, __version__
from .evaluation import ABLATION_MASKS, emit_report, write_table2_csv
from .metamodels import MODEL_KINDS
from .pipeline import (
    FeatureSet,
    build_report,
    evaluate_baselines,
    evaluate_model_method,
    featurize_corpus,
    load_trained_model,
    run_ablation,
    save_trained_model,
    train_model,
)
from .synthgen import SynthConfig, generate_corpus
from .training import TrainConfig


def _env_seed() -> int:
    return int(os.environ.get("MCRE_SEED", "0"))


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_run_json(out_dir: Path, config: dict, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": config,
        "config_hash": _config_hash(config),
        "versions": {"mcre": __version__, "schema": SCHEMA_VERSION},
    }
    if extra:
        payload.update(extra)
    with (out_dir / "run.json").open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _cmd_synth(args: argparse.Namespace) -> int:
    config = SynthConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    generate_corpus(config, args.out)
    _write_run_json(
        Path(args.out),
        {"command": "synth", "config_file": str(args.config), "seed": config.seed},
    )
    print(f"wrote synthetic corpus ({config.num_questions} questions) to {args.out}")
    return 0


def _cmd_featurize(args: argparse.Namespace) -> int:
    embed_url = args.embed_url or os.environ.get("MCRE_EMBED_URL")
    seed = args.seed if args.seed is not None else _env_seed()
    fs = featurize_corpus(
        args.corpus,
        args.out,
        seed=seed,
        tau=args.tau,
        knn=args.knn,
        embed_url=embed_url,
    )
    config = {
        "command": "featurize",
        "corpus": str(args.corpus),
        "seed": seed,
        "tau": args.tau,
        "knn": args.knn,
    }
    _write_run_json(Path(args.out), config, {"manifest_hash": fs.manifest.hash, **fs.meta})
    print(
        f"featurized {fs.meta['num_questions']} questions "
        f"(d={fs.manifest.dim}, graph={fs.meta['graph_construction']}) into {args.out}"
    )
    return 0


def _train_config_from_args(args: argparse.Namespace, seed: int) -> TrainConfig:
    config = TrainConfig(seed=seed)
    if args.max_epochs is not None:
        config.max_epochs = args.max_epochs
    if args.patience is not None:
        config.patience = args.patience
    return config


def _gbdt_overrides_from_args(args: argparse.Namespace) -> dict | None:
    overrides = {}
    if args.rounds is not None:
        overrides["max_rounds"] = args.rounds
    return overrides or None


def _cmd_train(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    fs = FeatureSet.load(args.features)
    trained, history = train_model(
        fs,
        args.model,
        seed=seed,
        config=_train_config_from_args(args, seed),
        gbdt_overrides=_gbdt_overrides_from_args(args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "train",
        "model": args.model,
        "seed": seed,
        "features": str(args.features),
    }
    save_trained_model(
        trained,
        out / "model.json",
        extra={"seed": seed, "config_hash": _config_hash(config)},
    )
    if hasattr(history, "write_csv"):
        history.write_csv(out / "history.csv")
    elif isinstance(history, list) and history:
        with (out / "history.csv").open("w", encoding="utf-8", newline="") as handle:
            handle.write("round,val_loss\n")
            for i, loss in enumerate(history, start=1):
                handle.write(f"{i},{loss!r}\n")
    _write_run_json(out, config, {"manifest_hash": fs.manifest.hash})
    print(f"trained {args.model} on {args.features}; model written to {out / 'model.json'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    fs = FeatureSet.load(args.features)
    methods = []
    if args.baselines:
        methods.extend(evaluate_baselines(fs, seed=seed, sc_reference=args.sc_reference))
    for model_path in args.models or []:
        trained = load_trained_model(model_path)
        methods.append(evaluate_model_method(trained, fs))
    if not methods:
        raise ValueError("nothing to evaluate: pass --models and/or --baselines")
    config = {
        "command": "eval",
        "features": str(args.features),
        "models": [str(p) for p in (args.models or [])],
        "baselines": bool(args.baselines),
        "bootstrap_reference": args.bootstrap_reference,
        "seed": seed,
    }
    report = build_report(
        fs,
        methods,
        bootstrap_reference=args.bootstrap_reference,
        seed=seed,
        metadata={
            "config_hash": _config_hash(config),
            "manifest_hash": fs.manifest.hash,
            "seed": seed,
            "versions": {"mcre": __version__, "schema": SCHEMA_VERSION},
        },
    )
    emit_report(report, args.report_dir)
    print(f"evaluated {len(methods)} methods; report written to {args.report_dir}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    fs = FeatureSet.load(args.features)
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as handle:
            masks = {name: tuple(blocks) for name, blocks in json.load(handle).items()}
    else:
        masks = ABLATION_MASKS
    config = TrainConfig(seed=seed)
    if args.max_epochs is not None:
        config.max_epochs = args.max_epochs
    rows = run_ablation(
        fs,
        kind=args.model,
        masks=masks,
        seed=seed,
        config=config,
        gbdt_overrides=_gbdt_overrides_from_args(args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table2_csv(rows, out / "table2.csv")
    _write_run_json(
        out,
        {
            "command": "ablate",
            "model": args.model,
            "features": str(args.features),
            "seed": seed,
            "masks": {name: list(blocks) for name, blocks in masks.items()},
        },
        {"manifest_hash": fs.manifest.hash},
    )
    print(f"ablation table written to {out / 'table2.csv'}")
    for name, acc, delta in rows:
        print(f"  {name:>14}: macro accuracy {acc:.4f} ({delta:+.4f} vs full)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcre",
        description="Multi-model consensus engine: synthetic corpora, features, meta-models, evaluation.",
    )
    parser.add_argument("--threads", type=int, default=1, help="worker cap (currently single-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--config", required=True, help="SynthConfig JSON file")
    p_synth.add_argument("--out", required=True, help="output corpus directory")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=_cmd_synth)

    p_feat = sub.add_parser("featurize", help="extract features and graphs from a corpus")
    p_feat.add_argument("--corpus", required=True)
    p_feat.add_argument("--out", required=True)
    p_feat.add_argument("--tau", type=float, default=0.7, help="similarity threshold for graph edges")
    p_feat.add_argument("--knn", type=int, default=None, help="use a k-NN graph instead of threshold")
    p_feat.add_argument("--embed-url", default=None, help="embedding service base URL")
    p_feat.add_argument("--seed", type=int, default=None)
    p_feat.set_defaults(func=_cmd_featurize)

    p_train = sub.add_parser("train", help="train a consensus meta-model")
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--model", required=True, choices=MODEL_KINDS)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--max-epochs", type=int, default=None)
    p_train.add_argument("--patience", type=int, default=None)
    p_train.add_argument("--rounds", type=int, default=None, help="boosting rounds cap (gbdt/rank)")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate models and baselines on the test split")
    p_eval.add_argument("--features", required=True)
    p_eval.add_argument("--models", nargs="*", default=[], help="model container files")
    p_eval.add_argument("--baselines", action="store_true", help="include the four baselines")
    p_eval.add_argument("--report-dir", required=True)
    p_eval.add_argument("--bootstrap-reference", default=None)
    p_eval.add_argument("--sc-reference", default=None, help="self-consistency reference model id")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_abl = sub.add_parser("ablate", help="run the feature-ablation suite")
    p_abl.add_argument("--features", required=True)
    p_abl.add_argument("--model", default="gbdt", choices=[k for k in MODEL_KINDS if k != "gating"])
    p_abl.add_argument("--spec", default=None, help="JSON file of {mask: [blocks]}")
    p_abl.add_argument("--out", default="ablation")
    p_abl.add_argument("--seed", type=int, default=None)
    p_abl.add_argument("--max-epochs", type=int, default=None)
    p_abl.add_argument("--rounds", type=int, default=None)
    p_abl.set_defaults(func=_cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
