"""Training loop with validation-based selection, ablations, and the weight sweep.

Each epoch resamples one fresh item-mode negative per positive (seeded by
epoch), shuffles positives and negatives together, and steps Adam per batch.
Model selection watches user-centric validation AUC; the best-epoch parameters
are kept and returned.  Evaluation rng streams are separate from the training
streams, so evaluation settings never perturb the parameter trajectory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .autodiff import Tape, backward
from .data import PreparedData, batch_iter, build_history_index, sample_negatives, samples_from_log
from .metrics import MetricReport, evaluate
from .model import ModelConfig, ModelParams, collate, forward
from .optim import AdamState, NumericError, adam_step
from .rng import STREAM_EVAL, STREAM_SHUFFLE, STREAM_TRAIN_NEG, SeededRng

EVAL_VALID = 1
EVAL_TEST = 2
HISTORY_HEADER = ["epoch", "L_i", "L_e", "L_p", "L_total", "val_auc"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and model settings; defaults follow the reference setup
    (embedding dim 32, batch 200, Adam lr 0.001, towers 100/64)."""

    embed_dim: int = 32
    batch_size: int = 200
    lr: float = 0.001
    max_seq_len: int = 20
    epochs_max: int = 50
    patience: int = 5
    lambda_e: float = 1e-4
    lambda_p: float = 1e-4
    lambda_reg: float = 1e-5
    backbone: str = "gru"
    static_tower_input: str = "embeddings"
    aux_on_negatives: bool = True
    k_neg_train: int = 1
    k_neg_eval: int = 49
    ndcg_k: int = 10
    seed: int = 0
    mlp_hidden: tuple[int, int] = (100, 64)

    def model_config(self, n_users: int, n_items: int) -> ModelConfig:
        return ModelConfig(
            n_users=n_users,
            n_items=n_items,
            embed_dim=self.embed_dim,
            max_seq_len=self.max_seq_len,
            mlp_hidden=self.mlp_hidden,
            backbone=self.backbone,
            static_tower_input=self.static_tower_input,
            lambda_e=self.lambda_e,
            lambda_p=self.lambda_p,
            lambda_reg=self.lambda_reg,
            aux_on_negatives=self.aux_on_negatives,
        )


@dataclass(frozen=True)
class EpochRecord:
    """Epoch-mean loss components and the validation AUC after the epoch."""

    epoch: int
    loss_item: float
    loss_rep: float
    loss_interest: float
    loss_reg: float
    loss_total: float
    val_auc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_HEADER)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss_item), repr(r.loss_rep),
                                 repr(r.loss_interest), repr(r.loss_total), repr(r.val_auc)])


@dataclass
class TrainResult:
    params: ModelParams
    history: TrainHistory
    best_epoch: int
    best_val_auc: float


def _valid_positives(prepared: PreparedData, index, max_seq_len: int):
    return [s for s in samples_from_log(prepared.valid, index, max_seq_len) if s.label == 1]


def train(
    config: TrainConfig,
    prepared: PreparedData,
    log_fn: Callable[[str], None] | None = None,
) -> TrainResult:
    """Optimize on the train split, keeping the best-validation-AUC epoch."""
    if not prepared.train.interactions:
        raise ValueError("train split is empty")
    index = build_history_index(prepared.full_log(), train_end=prepared.spec.train_end)
    positives = samples_from_log(prepared.train, index, config.max_seq_len)
    valid_pos = _valid_positives(prepared, index, config.max_seq_len)

    params = ModelParams.build(config.model_config(prepared.n_users, prepared.n_items),
                               config.seed)
    adam = AdamState(lr=config.lr)
    root = SeededRng(config.seed)
    history = TrainHistory()
    best_val = -math.inf
    best_epoch = 0
    best_params = params.copy()
    stale = 0

    for epoch in range(1, config.epochs_max + 1):
        neg_rng = root.child(STREAM_TRAIN_NEG, epoch)
        samples = list(positives)
        for pos in positives:
            if pos.label == 1:
                samples.extend(sample_negatives(pos, index, "item", config.k_neg_train, neg_rng))
        shuffle_rng = root.child(STREAM_SHUFFLE, epoch)
        sums = {"item": 0.0, "rep": 0.0, "interest": 0.0, "reg": 0.0, "total": 0.0}
        seen = 0
        named = params.named_tensors()
        for batch_idx, batch in enumerate(batch_iter(samples, config.batch_size,
                                                     shuffle_rng, shuffle=True)):
            tape = Tape()
            out = forward(params, collate(batch), tape)
            total = out.loss_total.item()
            if not math.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            params.zero_grads()
            backward(out.loss_total, tape)
            adam_step(named, adam)
            n = len(batch)
            seen += n
            sums["item"] += out.loss_item.item() * n
            sums["rep"] += out.loss_rep.item() * n
            sums["interest"] += out.loss_interest.item() * n
            sums["reg"] += out.loss_reg.item() * n
            sums["total"] += total * n

        if valid_pos:
            report = evaluate(params, valid_pos, index, "user", config.k_neg_eval,
                              config.ndcg_k, root.child(STREAM_EVAL, EVAL_VALID))
            val_auc = report.auc
        else:
            val_auc = math.nan
        history.records.append(EpochRecord(
            epoch=epoch,
            loss_item=sums["item"] / seen,
            loss_rep=sums["rep"] / seen,
            loss_interest=sums["interest"] / seen,
            loss_reg=sums["reg"] / seen,
            loss_total=sums["total"] / seen,
            val_auc=val_auc,
        ))
        if log_fn is not None:
            log_fn(f"epoch {epoch}: L_total={sums['total'] / seen:.4f} val_auc={val_auc:.4f}")

        improved = math.isnan(val_auc) or val_auc > best_val
        if improved:
            best_val = val_auc if not math.isnan(val_auc) else best_val
            best_epoch = epoch
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return TrainResult(best_params, history, best_epoch,
                       best_val if best_val != -math.inf else math.nan)


def evaluate_test(
    params: ModelParams,
    prepared: PreparedData,
    config: TrainConfig,
    centricity: str,
    config_hash: str = "",
) -> MetricReport:
    """Evaluate on the test split with a centricity-specific rng stream."""
    index = build_history_index(prepared.full_log(), train_end=prepared.spec.train_end)
    test_pos = [s for s in samples_from_log(prepared.test, index, config.max_seq_len)
                if s.label == 1]
    stream = 0 if centricity == "user" else 1
    rng = SeededRng(config.seed).child(STREAM_EVAL, EVAL_TEST, stream)
    return evaluate(params, test_pos, index, centricity, config.k_neg_eval,
                    config.ndcg_k, rng, config_hash=config_hash)


def ablate(
    config: TrainConfig,
    prepared: PreparedData,
    use_rep: bool,
    use_interest: bool,
    log_fn: Callable[[str], None] | None = None,
) -> dict:
    """Train with the chosen contrastive terms switched off and evaluate both ways."""
    ablated = replace(config,
                      lambda_e=config.lambda_e if use_rep else 0.0,
                      lambda_p=config.lambda_p if use_interest else 0.0)
    result = train(ablated, prepared, log_fn)
    return {
        "use_rep": use_rep,
        "use_interest": use_interest,
        "seed": config.seed,
        "best_epoch": result.best_epoch,
        "user": evaluate_test(result.params, prepared, ablated, "user"),
        "item": evaluate_test(result.params, prepared, ablated, "item"),
        "result": result,
    }


def ablation_grid(
    config: TrainConfig,
    prepared: PreparedData,
    log_fn: Callable[[str], None] | None = None,
) -> list[dict]:
    """The 2x2 grid over {representation, interest} contrastive switches."""
    rows = []
    for use_rep in (True, False):
        for use_interest in (True, False):
            rows.append(ablate(config, prepared, use_rep, use_interest, log_fn))
    return rows


DEFAULT_SWEEP_GRID = (1e-6, 1e-5, 1e-4, 1e-3)


def sweep_lambda(
    config: TrainConfig,
    prepared: PreparedData,
    grid: tuple[float, ...] = DEFAULT_SWEEP_GRID,
    log_fn: Callable[[str], None] | None = None,
) -> list[dict]:
    """One full train+evaluate per grid value, applied to both contrastive weights."""
    rows = []
    for value in grid:
        point = replace(config, lambda_e=value, lambda_p=value)
        result = train(point, prepared, log_fn)
        rows.append({
            "lambda_cl": value,
            "seed": config.seed,
            "best_epoch": result.best_epoch,
            "user": evaluate_test(result.params, prepared, point, "user"),
            "item": evaluate_test(result.params, prepared, point, "item"),
            "result": result,
        })
    return rows
