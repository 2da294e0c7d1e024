"""Synthetic interaction generator with planted, learnable structure.

Users belong to interest clusters; items belong to clusters too, but a
configurable fraction of items migrates to the next cluster each era, so an
item's current audience is revealed by its recent user sequence rather than
by its identity alone.  Within a cluster, item popularity and user activity
follow Zipf-like tiers, which breaks score ties and raises the attainable
ranking ceiling well above the cluster-membership baseline.

Both ranking directions are learnable: a user's recent items identify their
cluster (next-item signal), and an item's recent users identify its current
cluster (next-user signal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Interaction, InteractionLog
from .rng import STREAM_SYNTH, SeededRng


@dataclass(frozen=True)
class PlantedConfig:
    """Knobs for the planted-pattern generator."""

    n_users: int = 200
    n_items: int = 300
    n_events: int = 20000
    n_clusters: int = 6
    n_eras: int = 4
    in_cluster_prob: float = 0.92
    zipf_exponent: float = 1.0
    migrating_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 2 or self.n_users < self.n_clusters or self.n_items < self.n_clusters:
            raise ValueError("need at least two clusters and one member per cluster")
        if not 0.0 <= self.in_cluster_prob <= 1.0:
            raise ValueError("in_cluster_prob must lie in [0, 1]")


def user_cluster(user_id: int, cfg: PlantedConfig) -> int:
    return (user_id - 1) % cfg.n_clusters


def item_cluster(item_id: int, era: int, cfg: PlantedConfig) -> int:
    """Cluster of an item during an era; migrating items step forward each era."""
    base = (item_id - 1) % cfg.n_clusters
    tier = (item_id - 1) // cfg.n_clusters
    n_tiers = (cfg.n_items + cfg.n_clusters - 1) // cfg.n_clusters
    migrates = tier < int(round(n_tiers * cfg.migrating_fraction))
    return (base + era) % cfg.n_clusters if migrates else base


def era_of(timestamp: int, cfg: PlantedConfig) -> int:
    return min((timestamp - 1) * cfg.n_eras // cfg.n_events, cfg.n_eras - 1)


def _tier_weights(ids: np.ndarray, cfg: PlantedConfig) -> np.ndarray:
    tiers = (ids - 1) // cfg.n_clusters
    return 1.0 / np.power(tiers + 1.0, cfg.zipf_exponent)


def generate_planted(cfg: PlantedConfig) -> InteractionLog:
    """Generate the planted log; timestamps are 1..n_events, all labels 1."""
    rng = SeededRng(cfg.seed).child(STREAM_SYNTH)

    user_ids = np.arange(1, cfg.n_users + 1)
    user_weights = _tier_weights(user_ids, cfg)
    user_cum = np.cumsum(user_weights / user_weights.sum())

    item_ids = np.arange(1, cfg.n_items + 1)
    item_weights = _tier_weights(item_ids, cfg)
    # per (era, cluster): member item ids and their sampling distribution
    members: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for era in range(cfg.n_eras):
        clusters = np.array([item_cluster(j, era, cfg) for j in item_ids])
        for c in range(cfg.n_clusters):
            ids = item_ids[clusters == c]
            w = item_weights[clusters == c]
            members[(era, c)] = (ids, np.cumsum(w / w.sum()))

    u_draws = rng.random(cfg.n_events)
    coin = rng.random(cfg.n_events)
    pick = rng.random(cfg.n_events)
    uniform_items = rng.integers(cfg.n_items, size=cfg.n_events) + 1

    events: list[Interaction] = []
    for t in range(1, cfg.n_events + 1):
        i = t - 1
        user = int(np.searchsorted(user_cum, u_draws[i], side="right")) + 1
        user = min(user, cfg.n_users)
        if coin[i] < cfg.in_cluster_prob:
            ids, cum = members[(era_of(t, cfg), user_cluster(user, cfg))]
            idx = min(int(np.searchsorted(cum, pick[i], side="right")), len(ids) - 1)
            item = int(ids[idx])
        else:
            item = int(uniform_items[i])
        events.append(Interaction(user, item, t, 1))
    return InteractionLog.from_dense(events)


def default_split_bounds(cfg: PlantedConfig, train_frac: float = 0.8,
                         valid_frac: float = 0.1) -> tuple[int, int]:
    """Timestamp boundaries putting train_frac/valid_frac/rest across splits."""
    train_end = int(cfg.n_events * train_frac) + 1
    valid_end = int(cfg.n_events * (train_frac + valid_frac)) + 1
    return train_end, valid_end
