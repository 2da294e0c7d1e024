"""Interaction logs, dual-sequence sample construction, and negative sampling.

The pipeline is: ``ingest`` a raw CSV (dense ids assigned in first-appearance
order), ``n_core_filter`` to a fixpoint, ``chronological_split`` by timestamp
boundaries, then ``build_history_index`` over the full filtered log so that
samples anywhere on the timeline can read every strictly-earlier event.

Id 0 is reserved for padding and never assigned to a real user or item.
Sequences are left-padded, so the last position of a non-empty history is
always a real event.  Histories are built from positive (label=1) events
only; negative-candidate pools count any event inside the training window.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_left
from dataclasses import dataclass, field
from operator import itemgetter
from pathlib import Path
from typing import Iterator, Sequence

from .rng import SeededRng

_HEADER = ["user_id", "item_id", "timestamp", "label"]
_TS_KEY = itemgetter(0)


class DataFormatError(ValueError):
    """Malformed input file; message carries the offending line number."""


class EmptyPoolError(RuntimeError):
    """No negative candidates remain for a sample."""


@dataclass(frozen=True)
class Interaction:
    """One (user, item, timestamp, label) event; ids are dense and >= 1."""

    user_id: int
    item_id: int
    timestamp: int
    label: int = 1


@dataclass
class InteractionLog:
    """Chronologically sorted events plus the raw-to-dense id tables.

    Sorting is stable on (timestamp, original file order).  Splits produced
    from one log share its id tables, so dense ids stay globally consistent.
    """

    interactions: list[Interaction]
    user_ids: dict[str, int] = field(default_factory=dict)
    item_ids: dict[str, int] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.interactions)

    @classmethod
    def from_dense(cls, interactions: Sequence[Interaction]) -> "InteractionLog":
        """Wrap already-dense events; id tables become the identity mapping."""
        inter = sorted(interactions, key=lambda e: e.timestamp)
        users = sorted({e.user_id for e in inter})
        items = sorted({e.item_id for e in inter})
        return cls(inter, {str(u): u for u in users}, {str(i): i for i in items})


@dataclass(frozen=True)
class SplitSpec:
    """Half-open timestamp boundaries: train < train_end <= valid < valid_end <= test."""

    train_end: int
    valid_end: int

    def __post_init__(self):
        if self.valid_end < self.train_end:
            raise ValueError(f"split boundaries decrease: {self.train_end} > {self.valid_end}")


@dataclass(frozen=True)
class DualSample:
    """A training/eval instance: target pair plus both left-padded sequences."""

    target_user: int
    target_item: int
    item_seq: tuple[int, ...]
    user_seq: tuple[int, ...]
    label: int
    timestamp: int


def ingest(path: str | Path) -> InteractionLog:
    """Parse a raw interaction CSV into a dense, chronologically sorted log.

    The header must be ``user_id,item_id,timestamp,label`` (label column
    optional; missing labels default to 1).  Dense ids are assigned in
    first-appearance order over the file; equal timestamps keep file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header not in (_HEADER, _HEADER[:3]):
            raise DataFormatError(
                f"{path}: line 1: expected header '{','.join(_HEADER)}' "
                f"(label optional), got '{','.join(header)}'")
        has_label = len(header) == 4
        user_ids: dict[str, int] = {}
        item_ids: dict[str, int] = {}
        rows: list[Interaction] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            raw_user, raw_item = row[0].strip(), row[1].strip()
            if not raw_user or not raw_item:
                raise DataFormatError(f"{path}: line {lineno}: empty id field")
            try:
                ts = int(row[2])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-integer timestamp '{row[2]}'") from None
            if has_label:
                if row[3].strip() not in ("0", "1"):
                    raise DataFormatError(f"{path}: line {lineno}: label must be 0 or 1, got '{row[3]}'")
                label = int(row[3])
            else:
                label = 1
            uid = user_ids.setdefault(raw_user, len(user_ids) + 1)
            iid = item_ids.setdefault(raw_item, len(item_ids) + 1)
            rows.append(Interaction(uid, iid, ts, label))
        if not rows:
            raise DataFormatError(f"{path}: no interaction rows")
    rows.sort(key=lambda e: e.timestamp)  # sort is stable: ties keep file order
    return InteractionLog(rows, user_ids, item_ids)


def n_core_filter(log: InteractionLog, n: int) -> InteractionLog:
    """Drop users/items with fewer than n events, iterated to a fixpoint.

    Surviving ids are re-densified in first-appearance order, so the result
    again uses contiguous ids starting at 1.  Idempotent by construction.
    """
    if n < 1:
        raise ValueError(f"n-core level must be >= 1, got {n}")
    kept = log.interactions
    while True:
        user_counts: dict[int, int] = {}
        item_counts: dict[int, int] = {}
        for e in kept:
            user_counts[e.user_id] = user_counts.get(e.user_id, 0) + 1
            item_counts[e.item_id] = item_counts.get(e.item_id, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < n}
        bad_items = {i for i, c in item_counts.items() if c < n}
        if not bad_users and not bad_items:
            break
        kept = [e for e in kept if e.user_id not in bad_users and e.item_id not in bad_items]
        if not kept:
            break
    user_remap: dict[int, int] = {}
    item_remap: dict[int, int] = {}
    out: list[Interaction] = []
    for e in kept:
        uid = user_remap.setdefault(e.user_id, len(user_remap) + 1)
        iid = item_remap.setdefault(e.item_id, len(item_remap) + 1)
        out.append(Interaction(uid, iid, e.timestamp, e.label))
    user_ids = {raw: user_remap[old] for raw, old in log.user_ids.items() if old in user_remap}
    item_ids = {raw: item_remap[old] for raw, old in log.item_ids.items() if old in item_remap}
    return InteractionLog(out, user_ids, item_ids)


def chronological_split(
    log: InteractionLog, spec: SplitSpec
) -> tuple[InteractionLog, InteractionLog, InteractionLog]:
    """Partition by timestamp interval; the three parts share id tables."""
    train = [e for e in log.interactions if e.timestamp < spec.train_end]
    valid = [e for e in log.interactions if spec.train_end <= e.timestamp < spec.valid_end]
    test = [e for e in log.interactions if e.timestamp >= spec.valid_end]
    make = lambda rows: InteractionLog(rows, log.user_ids, log.item_ids)
    return make(train), make(valid), make(test)


class HistoryIndex:
    """Chronological per-user item lists and per-item user lists.

    Also records which (user, item) pairs fall inside the training window
    (timestamp < ``train_end``); those sets define negative-candidate pools.
    Built once, then treated as immutable.
    """

    def __init__(self, log: InteractionLog, train_end: int | None = None):
        self.n_users = log.n_users
        self.n_items = log.n_items
        self.user_items: dict[int, list[tuple[int, int]]] = {}
        self.item_users: dict[int, list[tuple[int, int]]] = {}
        self.user_seen: dict[int, set[int]] = {}
        self.item_seen: dict[int, set[int]] = {}
        for e in log.interactions:
            if e.label == 1:
                self.user_items.setdefault(e.user_id, []).append((e.timestamp, e.item_id))
                self.item_users.setdefault(e.item_id, []).append((e.timestamp, e.user_id))
            if train_end is None or e.timestamp < train_end:
                self.user_seen.setdefault(e.user_id, set()).add(e.item_id)
                self.item_seen.setdefault(e.item_id, set()).add(e.user_id)


def build_history_index(log: InteractionLog, train_end: int | None = None) -> HistoryIndex:
    """Index a sorted log for sequence construction and negative pools."""
    return HistoryIndex(log, train_end)


def _window_before(history: list[tuple[int, int]], t: int, length: int) -> tuple[int, ...]:
    """Ids of the last <=length events strictly before t, left-padded with 0."""
    cut = bisect_left(history, t, key=_TS_KEY)
    window = history[max(0, cut - length):cut]
    return (0,) * (length - len(window)) + tuple(event_id for _, event_id in window)


def make_dual_sample(
    index: HistoryIndex, user: int, item: int, t: int, length: int, label: int = 1
) -> DualSample:
    """Build the dual-sequence sample for (user, item) at time t."""
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    item_seq = _window_before(index.user_items.get(user, []), t, length)
    user_seq = _window_before(index.item_users.get(item, []), t, length)
    return DualSample(user, item, item_seq, user_seq, label, t)


def samples_from_log(log: InteractionLog, index: HistoryIndex, length: int) -> list[DualSample]:
    """One dual sample per interaction, in log (chronological) order."""
    return [
        make_dual_sample(index, e.user_id, e.item_id, e.timestamp, length, e.label)
        for e in log.interactions
    ]


_MAX_REJECTS_PER_DRAW = 1000


def draw_negative_ids(
    positive: DualSample,
    index: HistoryIndex,
    mode: str,
    k: int,
    rng: SeededRng,
) -> list[int]:
    """Draw k distinct replacement ids outside the anchor's training history.

    In ``item`` mode, items the target user interacted with inside the
    training window are excluded (``user`` mode symmetric); the positive's
    own partner id is excluded too.  Rejected draws are resampled; after
    1000 fruitless draws per remaining slot the pool is declared exhausted.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in ("item", "user"):
        raise ValueError(f"mode must be 'item' or 'user', got '{mode}'")
    if mode == "item":
        seen = index.user_seen.get(positive.target_user, set())
        catalog = index.n_items
        excluded = seen | {positive.target_item}
    else:
        seen = index.item_seen.get(positive.target_item, set())
        catalog = index.n_users
        excluded = seen | {positive.target_user}
    if len(excluded) >= catalog:
        raise EmptyPoolError(
            f"no {mode} candidates left for sample "
            f"(user={positive.target_user}, item={positive.target_item})")
    out: list[int] = []
    chosen: set[int] = set()
    attempts = 0
    budget = _MAX_REJECTS_PER_DRAW * k
    while len(out) < k:
        block = rng.integers(catalog, size=min(budget - attempts, max(k - len(out), 8))) + 1
        for cand in block:
            attempts += 1
            if cand not in excluded and cand not in chosen:
                chosen.add(int(cand))
                out.append(int(cand))
                if len(out) == k:
                    break
        if attempts >= budget and len(out) < k:
            raise EmptyPoolError(
                f"gave up after {attempts} draws looking for {k} distinct {mode} negatives")
    return out


def sample_negatives(
    positive: DualSample,
    index: HistoryIndex,
    mode: str,
    k: int,
    rng: SeededRng,
) -> list[DualSample]:
    """Draw k distinct label-0 counterparts for a positive sample.

    In ``item`` mode the target item is replaced by an item the user never
    interacted with inside the training window, and the user sequence is
    rebuilt from the replacement item's own pre-t history; ``user`` mode is
    symmetric.  The positive's own partner id is never drawn.
    """
    length = len(positive.item_seq)
    out: list[DualSample] = []
    for cand in draw_negative_ids(positive, index, mode, k, rng):
        if mode == "item":
            user_seq = _window_before(index.item_users.get(cand, []), positive.timestamp, length)
            out.append(DualSample(positive.target_user, cand, positive.item_seq,
                                  user_seq, 0, positive.timestamp))
        else:
            item_seq = _window_before(index.user_items.get(cand, []), positive.timestamp, length)
            out.append(DualSample(cand, positive.target_item, item_seq,
                                  positive.user_seq, 0, positive.timestamp))
    return out


def batch_iter(
    samples: Sequence[DualSample],
    batch_size: int,
    rng: SeededRng | None = None,
    shuffle: bool = False,
) -> Iterator[list[DualSample]]:
    """Yield fixed-size batches (last one may be short), optionally shuffled."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        order = rng.permutation(len(samples))
    else:
        order = range(len(samples))
    batch: list[DualSample] = []
    for idx in order:
        batch.append(samples[idx])
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


# ---------------------------------------------------------------------------
# prepared-split files
# ---------------------------------------------------------------------------

def write_interactions_csv(log: InteractionLog, path: str | Path) -> None:
    """Serialize a dense log back to the input CSV schema."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for e in log.interactions:
            writer.writerow([e.user_id, e.item_id, e.timestamp, e.label])


def save_prepared(
    out_dir: str | Path,
    train: InteractionLog,
    valid: InteractionLog,
    test: InteractionLog,
    n_core: int,
    spec: SplitSpec,
) -> None:
    """Write train/valid/test CSVs plus the metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_interactions_csv(train, out_dir / "train.csv")
    write_interactions_csv(valid, out_dir / "valid.csv")
    write_interactions_csv(test, out_dir / "test.csv")
    meta = {
        "format_version": 1,
        "n_core": n_core,
        "train_end": spec.train_end,
        "valid_end": spec.valid_end,
        "n_users": train.n_users,
        "n_items": train.n_items,
        "user_ids": train.user_ids,
        "item_ids": train.item_ids,
        "counts": {"train": len(train), "valid": len(valid), "test": len(test)},
    }
    (out_dir / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n",
                                           encoding="utf-8")


def _read_dense_csv(path: Path) -> list[Interaction]:
    rows: list[Interaction] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _HEADER:
            raise DataFormatError(f"{path}: line 1: bad prepared-split header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(Interaction(int(row[0]), int(row[1]), int(row[2]), int(row[3])))
            except (ValueError, IndexError):
                raise DataFormatError(f"{path}: line {lineno}: bad prepared-split row") from None
    return rows


@dataclass
class PreparedData:
    """Loaded splits plus metadata, ready for training and evaluation."""

    train: InteractionLog
    valid: InteractionLog
    test: InteractionLog
    n_core: int
    spec: SplitSpec

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def full_log(self) -> InteractionLog:
        rows = sorted(self.train.interactions + self.valid.interactions + self.test.interactions,
                      key=lambda e: e.timestamp)
        return InteractionLog(rows, self.train.user_ids, self.train.item_ids)


def load_prepared(data_dir: str | Path) -> PreparedData:
    """Load splits written by :func:`save_prepared`; ids are not remapped."""
    data_dir = Path(data_dir)
    meta_path = data_dir / "metadata.json"
    if not meta_path.exists():
        raise DataFormatError(f"{meta_path}: missing metadata file")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    user_ids = {k: int(v) for k, v in meta["user_ids"].items()}
    item_ids = {k: int(v) for k, v in meta["item_ids"].items()}
    logs = {}
    for name in ("train", "valid", "test"):
        logs[name] = InteractionLog(_read_dense_csv(data_dir / f"{name}.csv"), user_ids, item_ids)
    return PreparedData(logs["train"], logs["valid"], logs["test"], int(meta["n_core"]),
                        SplitSpec(int(meta["train_end"]), int(meta["valid_end"])))
