"""Command-line surface: prepare, train, evaluate, ablate, sweep, selftest.

Every command is a pure function of its input files, flags, and seed, and
rerunning it reproduces its outputs byte for byte.  Exit codes: 0 ok,
1 selftest failure, 2 input error, 3 numeric failure, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DataFormatError, SplitSpec, chronological_split, ingest,
                   load_prepared, n_core_filter, save_prepared)
from .optim import NumericError
from .runconfig import ConfigError, RunConfig, config_hash, load_run_config, serialize_run_config
from .selftest import run_selftest
from .training import DEFAULT_SWEEP_GRID, ablation_grid, evaluate_test, sweep_lambda, train

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_ARTIFACT = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--out", help="output directory")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", dest="data_dir", help="prepared-splits directory")
    parser.add_argument("--embed-dim", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--max-seq-len", type=int)
    parser.add_argument("--epochs-max", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--lambda-e", type=float)
    parser.add_argument("--lambda-p", type=float)
    parser.add_argument("--lambda-reg", type=float)
    parser.add_argument("--backbone", choices=["gru", "attention"])
    parser.add_argument("--static-tower-input", choices=["embeddings", "hidden"])
    parser.add_argument("--aux-on-negatives", choices=["true", "false"])
    parser.add_argument("--k-neg-train", type=int)
    parser.add_argument("--k-neg-eval", type=int)
    parser.add_argument("--ndcg-k", type=int)
    parser.add_argument("--mlp-hidden")


def _train_overrides(args: argparse.Namespace) -> dict:
    keys = ["data_dir", "out", "seed", "embed_dim", "batch_size", "lr", "max_seq_len",
            "epochs_max", "patience", "lambda_e", "lambda_p", "lambda_reg", "backbone",
            "static_tower_input", "aux_on_negatives", "k_neg_train", "k_neg_eval",
            "ndcg_k", "mlp_hidden"]
    return {k: getattr(args, k, None) for k in keys}


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(serialize_run_config(cfg), encoding="utf-8")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, {
        "input": args.input, "out": args.out, "seed": args.seed,
        "n_core": args.n_core, "train_end": args.train_end, "valid_end": args.valid_end,
    })
    if not cfg.input:
        raise DataFormatError("prepare needs --input (or 'input=' in the config)")
    log = ingest(cfg.input)
    filtered = n_core_filter(log, cfg.n_core)
    if not filtered.interactions:
        print(f"warning: {cfg.n_core}-core filtering emptied the log", file=sys.stderr)
    spec = SplitSpec(cfg.train_end, cfg.valid_end)
    train_log, valid_log, test_log = chronological_split(filtered, spec)
    out_dir = Path(cfg.out)
    save_prepared(out_dir, train_log, valid_log, test_log, cfg.n_core, spec)
    _echo_config(cfg, out_dir)
    print(f"prepared {len(train_log)} train / {len(valid_log)} valid / {len(test_log)} test "
          f"interactions ({filtered.n_users} users, {filtered.n_items} items) -> {out_dir}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    if not cfg.data_dir:
        raise DataFormatError("train needs --data (or 'data_dir=' in the config)")
    prepared = load_prepared(cfg.data_dir)
    train_cfg = cfg.train_config()
    out_dir = Path(cfg.out)
    _echo_config(cfg, out_dir)
    result = train(train_cfg, prepared, log_fn=lambda line: print(line, file=sys.stderr))
    digest = config_hash(cfg)
    save_checkpoint(result.params, out_dir / "checkpoint.bin", config_hash=digest,
                    rng_seed=cfg.seed, run_config=asdict(cfg))
    result.history.to_csv(out_dir / "history.csv")
    for centricity in ("user", "item"):
        report = evaluate_test(result.params, prepared, train_cfg, centricity,
                               config_hash=digest)
        (out_dir / f"report_{centricity}.json").write_text(report.to_json(), encoding="utf-8")
        print(report.to_json(), end="")
    print(f"best epoch {result.best_epoch} (val_auc={result.best_val_auc:.4f}) -> {out_dir}",
          file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    expected = None
    if args.config:
        expected = config_hash(load_run_config(args.config))
    params, header = load_checkpoint(args.checkpoint, expected_config_hash=expected)
    stored = header.get("run_config") or {}
    cfg = RunConfig(**stored) if stored else RunConfig()
    if args.data_dir:
        cfg.data_dir = args.data_dir
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.centricity:
        cfg.centricity = args.centricity
    if args.k_neg is not None:
        cfg.k_neg_eval = args.k_neg
    if not cfg.data_dir:
        raise DataFormatError("evaluate needs --data (or a checkpoint with data_dir)")
    prepared = load_prepared(cfg.data_dir)
    train_cfg = cfg.train_config()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    centricities = ("user", "item") if cfg.centricity == "both" else (cfg.centricity,)
    for centricity in centricities:
        report = evaluate_test(params, prepared, train_cfg, centricity,
                               config_hash=header["config_hash"])
        (out_dir / f"report_{centricity}.json").write_text(report.to_json(), encoding="utf-8")
        print(report.to_json(), end="")
    return EXIT_OK


_REPORT_COLS = ("auc", "gauc", "mrr", "ndcg_at_k")


def _flatten_row(row: dict, lead: list[str]) -> dict:
    flat = {k: row[k] for k in lead}
    for centricity in ("user", "item"):
        report = row[centricity]
        for col in _REPORT_COLS:
            flat[f"{centricity}_{col}"] = getattr(report, col)
    return flat


def _write_table(rows: list[dict], lead: list[str], out_dir: Path, stem: str) -> None:
    flat_rows = [_flatten_row(r, lead) for r in rows]
    _write_json(out_dir / f"{stem}.json", flat_rows)
    with (out_dir / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(flat_rows[0].keys()))
        writer.writeheader()
        writer.writerows(flat_rows)


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    if not cfg.data_dir:
        raise DataFormatError("ablate needs --data (or 'data_dir=' in the config)")
    prepared = load_prepared(cfg.data_dir)
    out_dir = Path(cfg.out)
    _echo_config(cfg, out_dir)
    rows = ablation_grid(cfg.train_config(), prepared)
    _write_table(rows, ["use_rep", "use_interest", "seed", "best_epoch"], out_dir, "ablation")
    print((out_dir / "ablation.json").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    if not cfg.data_dir:
        raise DataFormatError("sweep needs --data (or 'data_dir=' in the config)")
    grid = DEFAULT_SWEEP_GRID if args.grid is None else \
        tuple(float(x) for x in args.grid.split(","))
    prepared = load_prepared(cfg.data_dir)
    out_dir = Path(cfg.out)
    _echo_config(cfg, out_dir)
    rows = sweep_lambda(cfg.train_config(), prepared, grid)
    _write_table(rows, ["lambda_cl", "seed", "best_epoch"], out_dir, "sweep")
    print((out_dir / "sweep.json").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    return run_selftest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrec",
                                     description="Dual-sequence recommender workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, n-core filter, and split a raw CSV")
    p.add_argument("--input", help="raw interaction CSV")
    p.add_argument("--n-core", dest="n_core", type=int)
    p.add_argument("--train-end", dest="train_end", type=int)
    p.add_argument("--valid-end", dest="valid_end", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("train", help="train and write checkpoint, history, reports")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", dest="data_dir")
    p.add_argument("--centricity", choices=["user", "item", "both"])
    p.add_argument("--k-neg", dest="k_neg", type=int)
    _add_common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ablate", help="2x2 contrastive-switch grid")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("sweep", help="contrastive-weight sweep")
    p.add_argument("--grid", help="comma-separated weight values")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("selftest", help="run built-in verification suites")
    _add_common(p)
    p.set_defaults(handler=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (DataFormatError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
