"""Dual-centric ranking metrics: AUC, GAUC, MRR, NDCG@K over scored groups.

User-centric evaluation ranks candidate items per user with the next-item
probability; item-centric evaluation ranks candidate users per item with the
next-user probability.  Groups pool every scored candidate that shares the
group key, AUC/MRR/NDCG average unweighted across groups, and GAUC weights
each group's AUC by its positive count.

All metrics are rank-based, hence invariant under strictly monotone score
transforms.  Tied scores rank positives last, so ties never inflate a metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import DualSample, EmptyPoolError, HistoryIndex, draw_negative_ids
from .model import ModelParams, encode_item_history, encode_user_history, tower_probability
from .rng import SeededRng

CENTRICITIES = ("user", "item")


@dataclass
class ScoredGroup:
    """All (score, label) pairs that share one group key."""

    key: int
    scores: np.ndarray
    labels: np.ndarray

    def evaluable(self) -> bool:
        n_pos = int(self.labels.sum())
        return 0 < n_pos < len(self.labels)


@dataclass
class MetricReport:
    """Ranking metrics for one centricity plus the group bookkeeping."""

    centricity: str
    auc: float
    gauc: float
    mrr: float
    ndcg_at_k: float
    k: int
    k_neg: int
    groups_evaluated: int
    groups_skipped: int
    seed: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "centricity": self.centricity,
            "auc": self.auc,
            "gauc": self.gauc,
            "mrr": self.mrr,
            f"ndcg@{self.k}": self.ndcg_at_k,
            "k_neg": self.k_neg,
            "groups_evaluated": self.groups_evaluated,
            "groups_skipped": self.groups_skipped,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted half.

    Computed from the rank-sum formula with average ranks; raises on
    single-class input so callers can record the group as skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(groups: list[ScoredGroup]) -> float:
    """Per-group AUC averaged with the group's positive count as weight."""
    if not groups:
        raise ValueError("GAUC needs at least one evaluable group")
    total = 0.0
    weight = 0.0
    for g in groups:
        w = float(g.labels.sum())
        total += w * auc(g.scores, g.labels)
        weight += w
    return total / weight


def _descending_labels(group: ScoredGroup) -> np.ndarray:
    """Labels ordered by score descending; ties put positives last."""
    order = np.lexsort((group.labels, -group.scores))
    return group.labels[order]


def mrr(groups: list[ScoredGroup]) -> float:
    """Mean reciprocal rank of the first positive per group."""
    if not groups:
        raise ValueError("MRR needs at least one group")
    total = 0.0
    for g in groups:
        ordered = _descending_labels(g)
        first = int(np.argmax(ordered == 1))
        total += 1.0 / (first + 1)
    return total / len(groups)


def ndcg_at_k(groups: list[ScoredGroup], k: int) -> float:
    """Binary-relevance NDCG truncated at rank k, averaged over groups."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not groups:
        raise ValueError("NDCG needs at least one group")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    total = 0.0
    for g in groups:
        ordered = _descending_labels(g)[:k]
        dcg = float(discounts[: len(ordered)][ordered == 1].sum())
        n_pos = min(int(g.labels.sum()), k)
        idcg = float(discounts[:n_pos].sum())
        total += dcg / idcg if idcg > 0 else 0.0
    return total / len(groups)


def metrics_from_groups(groups: list[ScoredGroup], k: int) -> tuple[float, float, float, float, int, int]:
    """(mean AUC, GAUC, MRR, NDCG@k, evaluated, skipped) over the group list."""
    usable = [g for g in groups if g.evaluable()]
    skipped = len(groups) - len(usable)
    if not usable:
        raise ValueError("no group has both a positive and a negative")
    mean_auc = float(np.mean([auc(g.scores, g.labels) for g in usable]))
    return mean_auc, gauc(usable), mrr(usable), ndcg_at_k(usable, k), len(usable), skipped


def evaluate(
    params: ModelParams,
    positives: list[DualSample],
    index: HistoryIndex,
    centricity: str,
    k_neg: int,
    k: int,
    rng: SeededRng,
    batch_size: int = 4096,
    config_hash: str = "",
) -> MetricReport:
    """Score each positive against k_neg sampled negatives and rank per group.

    User-centric: negatives replace the item, groups key on the user, scores
    come from the next-item tower.  Item-centric: symmetric with the
    next-user tower.  Positives whose candidate pool is exhausted still enter
    their group; a group left without both classes is counted as skipped.

    The ranking tower only reads the anchor-side sequence, which every
    candidate of a positive shares, so each positive's context is encoded
    once and candidates differ only in the replaced target id.
    """
    positives = [s for s in positives if s.label == 1]
    if not positives:
        raise ValueError("empty test set: no positive samples to evaluate")
    if centricity not in CENTRICITIES:
        raise ValueError(f"centricity must be one of {CENTRICITIES}, got '{centricity}'")
    mode = "item" if centricity == "user" else "user"

    # candidate ids per positive: the true partner first, then the negatives
    ctx_idx: list[int] = []
    target_ids: list[int] = []
    labels_flat: list[int] = []
    keys_flat: list[int] = []
    for pos_i, pos in enumerate(positives):
        key = pos.target_user if centricity == "user" else pos.target_item
        partner = pos.target_item if centricity == "user" else pos.target_user
        try:
            negatives = draw_negative_ids(pos, index, mode, k_neg, rng)
        except EmptyPoolError:
            negatives = []
        for target, label in [(partner, 1)] + [(n, 0) for n in negatives]:
            ctx_idx.append(pos_i)
            target_ids.append(target)
            labels_flat.append(label)
            keys_flat.append(key)

    # stage 1: one context encoding per positive
    if centricity == "user":
        seqs = np.array([p.item_seq for p in positives], dtype=np.int64)
        encode, table, tower = encode_item_history, params.item_emb, params.tower_item
    else:
        seqs = np.array([p.user_seq for p in positives], dtype=np.int64)
        encode, table, tower = encode_user_history, params.user_emb, params.tower_user
    contexts = np.concatenate([encode(params, seqs[start:start + batch_size])
                               for start in range(0, len(positives), batch_size)])

    # stage 2: tower over (context, candidate-embedding) rows
    ctx_idx_arr = np.asarray(ctx_idx)
    target_arr = np.asarray(target_ids)
    scores = np.empty(len(target_arr), dtype=np.float64)
    for start in range(0, len(target_arr), batch_size):
        stop = start + batch_size
        scores[start:stop] = tower_probability(
            tower,
            contexts[ctx_idx_arr[start:stop]],
            table.tensor.values[target_arr[start:stop]],
        )

    grouped: dict[int, tuple[list[float], list[int]]] = {}
    for key, score, label in zip(keys_flat, scores, labels_flat):
        entry = grouped.setdefault(key, ([], []))
        entry[0].append(float(score))
        entry[1].append(label)
    groups = [ScoredGroup(key, np.array(sc), np.array(lb)) for key, (sc, lb) in grouped.items()]

    mean_auc, weighted_auc, mean_rr, ndcg, evaluated, skipped = metrics_from_groups(groups, k)
    return MetricReport(
        centricity=centricity,
        auc=mean_auc,
        gauc=weighted_auc,
        mrr=mean_rr,
        ndcg_at_k=ndcg,
        k=k,
        k_neg=k_neg,
        groups_evaluated=evaluated,
        groups_skipped=skipped,
        seed=rng.seed,
        config_hash=config_hash,
    )
