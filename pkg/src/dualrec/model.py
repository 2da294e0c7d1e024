"""Dual-encoder contrastive recommendation model.

Two recurrent (or attention) encoders read the item sequence of the target
user and the user sequence of the target item.  Their final states feed three
independent MLP towers: next-item probability, next-user probability, and a
sequence-free static matching probability.  Two auxiliary losses tie the
branches together: a representation loss pulling transformed encoder outputs
toward the target embeddings, and an interest loss pulling the next-user and
static probabilities toward the supervised next-item probability.

All heavy math runs batched: sequences enter as per-step (B, D) tensors so a
whole batch shares one tape.  Row 0 of each embedding table is the padding
row; it is all-zero and never receives gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from scipy.special import expit

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .data import DualSample
from .rng import STREAM_INIT, SeededRng, xavier_init

PROB_CLAMP = 1e-12

BACKBONES = ("gru", "attention")
STATIC_TOWER_INPUTS = ("embeddings", "hidden")


@dataclass(frozen=True)
class ModelConfig:
    """Shape and loss-weight settings for one model instance.

    ``lambda_e`` scales the representation loss, ``lambda_p`` the interest
    loss, ``lambda_reg`` the squared-L2 penalty on the embedding tables.
    ``static_tower_input`` picks what the static tower consumes: the target
    embeddings (default) or the two encoder states.
    """

    n_users: int
    n_items: int
    embed_dim: int = 32
    max_seq_len: int = 20
    mlp_hidden: tuple[int, int] = (100, 64)
    backbone: str = "gru"
    static_tower_input: str = "embeddings"
    lambda_e: float = 1e-4
    lambda_p: float = 1e-4
    lambda_reg: float = 1e-5
    aux_on_negatives: bool = True

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("model needs at least one user and one item")
        if self.embed_dim < 1 or self.max_seq_len < 1:
            raise ValueError("embed_dim and max_seq_len must be positive")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got '{self.backbone}'")
        if self.static_tower_input not in STATIC_TOWER_INPUTS:
            raise ValueError(f"static_tower_input must be one of {STATIC_TOWER_INPUTS}")
        if min(self.lambda_e, self.lambda_p, self.lambda_reg) < 0:
            raise ValueError("loss weights must be non-negative")
        if len(self.mlp_hidden) != 2:
            raise ValueError("towers use exactly two hidden layers")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

class EmbeddingTable:
    """(count+1) x D matrix whose row 0 is the frozen all-zero padding row."""

    def __init__(self, name: str, tensor: Tensor):
        self.name = name
        self.tensor = tensor

    @classmethod
    def init(cls, name: str, count: int, dim: int, rng: SeededRng) -> "EmbeddingTable":
        tensor = xavier_init((count + 1, dim), rng)
        tensor.values[0, :] = 0.0
        return cls(name, tensor)

    @property
    def rows(self) -> int:
        return self.tensor.values.shape[0]

    @property
    def dim(self) -> int:
        return self.tensor.values.shape[1]


@dataclass
class GruWeights:
    """Gate matrices (update, reset, candidate), each D x 2D, no biases."""

    w_update: Tensor
    w_reset: Tensor
    w_cand: Tensor

    @classmethod
    def init(cls, dim: int, rng: SeededRng) -> "GruWeights":
        shape = (dim, 2 * dim)
        return cls(xavier_init(shape, rng), xavier_init(shape, rng), xavier_init(shape, rng))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.update": self.w_update,
                f"{prefix}.reset": self.w_reset,
                f"{prefix}.cand": self.w_cand}


@dataclass
class AttentionWeights:
    """Single-head attention block: positions, query/key maps, feed-forward."""

    positions: Tensor
    w_query: Tensor
    w_key: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor

    @classmethod
    def init(cls, dim: int, max_len: int, rng: SeededRng) -> "AttentionWeights":
        return cls(
            positions=xavier_init((max_len, dim), rng),
            w_query=xavier_init((dim, dim), rng),
            w_key=xavier_init((dim, dim), rng),
            ff_w1=xavier_init((dim, dim), rng),
            ff_b1=xavier_init((dim,), rng),
            ff_w2=xavier_init((dim, dim), rng),
            ff_b2=xavier_init((dim,), rng),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.positions": self.positions,
                f"{prefix}.query": self.w_query,
                f"{prefix}.key": self.w_key,
                f"{prefix}.ff_w1": self.ff_w1,
                f"{prefix}.ff_b1": self.ff_b1,
                f"{prefix}.ff_w2": self.ff_w2,
                f"{prefix}.ff_b2": self.ff_b2}


@dataclass
class AffineTransform:
    """D x D weight plus bias; maps one representation space onto another."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, dim: int, rng: SeededRng) -> "AffineTransform":
        return cls(xavier_init((dim, dim), rng), xavier_init((dim,), rng))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class MlpTower:
    """2D -> hidden1 -> hidden2 -> 1 network, rectifier inside, sigmoid out."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    @classmethod
    def init(cls, in_dim: int, hidden: tuple[int, int], rng: SeededRng) -> "MlpTower":
        h1, h2 = hidden
        return cls(
            w1=xavier_init((in_dim, h1), rng), b1=xavier_init((h1,), rng),
            w2=xavier_init((h1, h2), rng), b2=xavier_init((h2,), rng),
            w3=xavier_init((h2, 1), rng), b3=xavier_init((1,), rng),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
                f"{prefix}.w3": self.w3, f"{prefix}.b3": self.b3}


def _init_encoder(config: ModelConfig, rng: SeededRng):
    if config.backbone == "gru":
        return GruWeights.init(config.embed_dim, rng)
    return AttentionWeights.init(config.embed_dim, config.max_seq_len, rng)


class ModelParams:
    """Every learnable tensor of the model, addressable by name.

    Initialization draws happen in the fixed order of :meth:`named_tensors`,
    which makes parameter values a pure function of (config, seed).
    """

    def __init__(self, config: ModelConfig, rng: SeededRng):
        self.config = config
        dim = config.embed_dim
        self.user_emb = EmbeddingTable.init("user_emb", config.n_users, dim, rng)
        self.item_emb = EmbeddingTable.init("item_emb", config.n_items, dim, rng)
        self.user_encoder = _init_encoder(config, rng)
        self.item_encoder = _init_encoder(config, rng)
        self.item_to_user = AffineTransform.init(dim, rng)
        self.user_to_item = AffineTransform.init(dim, rng)
        self.tower_item = MlpTower.init(2 * dim, config.mlp_hidden, rng)
        self.tower_user = MlpTower.init(2 * dim, config.mlp_hidden, rng)
        self.tower_static = MlpTower.init(2 * dim, config.mlp_hidden, rng)

    @classmethod
    def build(cls, config: ModelConfig, seed: int) -> "ModelParams":
        return cls(config, SeededRng(seed).child(STREAM_INIT))

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "user_emb": self.user_emb.tensor,
            "item_emb": self.item_emb.tensor,
        }
        out.update(self.user_encoder.named("user_enc"))
        out.update(self.item_encoder.named("item_enc"))
        out.update(self.item_to_user.named("item_to_user"))
        out.update(self.user_to_item.named("user_to_item"))
        out.update(self.tower_item.named("tower_item"))
        out.update(self.tower_user.named("tower_user"))
        out.update(self.tower_static.named("tower_static"))
        return out

    def zero_grads(self) -> None:
        for tensor in self.named_tensors().values():
            tensor.zero_grad()

    def copy(self) -> "ModelParams":
        clone = ModelParams.build(self.config, seed=0)
        for name, tensor in clone.named_tensors().items():
            tensor.values = self.named_tensors()[name].values.copy()
            tensor.grad = None
        return clone


# ---------------------------------------------------------------------------
# forward building blocks
# ---------------------------------------------------------------------------

def embed_lookup(tape: Tape | None, table: EmbeddingTable, ids: np.ndarray) -> Tensor:
    """Gather embedding rows; gradient scatter-adds into non-pad rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        raise IndexError(f"id out of range [0, {table.rows}) for table '{table.name}'")
    out = Tensor(table.tensor.values[ids])
    if tape is not None:
        shape = table.tensor.values.shape

        def rule(g, ids=ids):
            gm = np.zeros(shape)
            flat = ids.reshape(-1)
            keep = flat != 0
            np.add.at(gm, flat[keep], g.reshape(-1, shape[1])[keep])
            return (gm,)

        tape.record(out, (table.tensor,), rule)
    return out


def gru_step(tape: Tape | None, step: Tensor, h_prev: Tensor, weights: GruWeights) -> Tensor:
    """One gated-recurrence step, fused into a single tape record.

    update = sigmoid(W_update [E_t, H_prev])
    reset  = sigmoid(W_reset  [E_t, H_prev])
    cand   = tanh(W_cand [E_t, reset * H_prev])
    H_t    = (1 - update) * H_prev + update * cand
    """
    e, h = step.values, h_prev.values
    if e.shape != h.shape:
        raise ShapeError(f"gru_step: input {e.shape} vs hidden {h.shape}")
    dim = e.shape[1]
    if weights.w_update.values.shape != (dim, 2 * dim):
        raise ShapeError(f"gru_step: weights {weights.w_update.values.shape} "
                         f"do not fit inputs of width {dim}")
    joint = np.concatenate([e, h], axis=1)
    update = expit(joint @ weights.w_update.values.T)
    reset = expit(joint @ weights.w_reset.values.T)
    gated = reset * h
    joint_cand = np.concatenate([e, gated], axis=1)
    cand = np.tanh(joint_cand @ weights.w_cand.values.T)
    out = Tensor((1.0 - update) * h + update * cand)
    if tape is not None:
        wu, wr, wc = weights.w_update.values, weights.w_reset.values, weights.w_cand.values

        def rule(g):
            d_update = g * (cand - h)
            d_cand = g * update
            d_h = g * (1.0 - update)
            d_cand_pre = d_cand * (1.0 - cand * cand)
            d_joint_cand = d_cand_pre @ wc
            d_wc = d_cand_pre.T @ joint_cand
            d_e = d_joint_cand[:, :dim].copy()
            d_gated = d_joint_cand[:, dim:]
            d_reset = d_gated * h
            d_h += d_gated * reset
            d_update_pre = d_update * update * (1.0 - update)
            d_reset_pre = d_reset * reset * (1.0 - reset)
            d_wu = d_update_pre.T @ joint
            d_wr = d_reset_pre.T @ joint
            d_joint = d_update_pre @ wu + d_reset_pre @ wr
            d_e += d_joint[:, :dim]
            d_h += d_joint[:, dim:]
            return d_e, d_h, d_wu, d_wr, d_wc

        tape.record(out, (step, h_prev, weights.w_update, weights.w_reset, weights.w_cand), rule)
    return out


def gru_encode_steps(tape: Tape | None, steps: Sequence[Tensor], weights: GruWeights) -> Tensor:
    """Run the gated recurrence over per-step (B, D) inputs; return H_T.

    Gates have no biases, so an all-zero step leaves the hidden state exactly
    unchanged from zero; leading pad steps therefore cannot influence the
    output (left-pad invariance).
    """
    if not steps:
        raise ShapeError("gru_encode needs at least one step")
    batch, dim = steps[0].values.shape
    h = Tensor(np.zeros((batch, dim)), constant=True)
    for step in steps:
        h = gru_step(tape, step, h, weights)
    return h


def gru_encode(tape: Tape | None, embedded: Tensor, weights: GruWeights) -> Tensor:
    """Single-sequence wrapper: (T, D) embedded steps -> (D,) final state."""
    seq_len, dim = embedded.values.shape
    steps = [ad.take_rows(tape, embedded, np.array([t])) for t in range(seq_len)]
    return ad.reshape(tape, gru_encode_steps(tape, steps, weights), (dim,))


def _attend_last(
    tape: Tape | None,
    xs: Sequence[Tensor],
    w_query: Tensor,
    w_key: Tensor,
    pad_mask: np.ndarray,
) -> Tensor:
    """Scaled dot-product attention of the last position over the sequence.

    ``pad_mask`` is (B, T) boolean, True where the key must be excluded.
    Values are the inputs themselves (no value projection).  A row with every
    key masked attends to nothing and returns zeros.
    """
    stacked = np.stack([x.values for x in xs], axis=1)  # (B, T, D)
    dim = stacked.shape[2]
    scale = 1.0 / np.sqrt(dim)
    query = stacked[:, -1, :] @ w_query.values
    keys = stacked @ w_key.values
    logits = np.einsum("bd,btd->bt", query, keys) * scale
    logits = np.where(pad_mask, -np.inf, logits)
    row_max = logits.max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(row_max), row_max, 0.0)
    weights = np.exp(logits - shift)
    weights = np.where(pad_mask, 0.0, weights)
    denom = weights.sum(axis=1, keepdims=True)
    attn = np.where(denom > 0.0, weights / np.where(denom > 0.0, denom, 1.0), 0.0)
    out = Tensor(np.einsum("bt,btd->bd", attn, stacked))
    if tape is not None:
        def rule(g):
            d_attn = np.einsum("bd,btd->bt", g, stacked)
            d_stacked = np.einsum("bt,bd->btd", attn, g)
            # softmax backward; fully-masked rows have attn == 0 and drop out
            inner = (d_attn * attn).sum(axis=1, keepdims=True)
            d_logits = attn * (d_attn - inner) * scale
            d_query = np.einsum("bt,btd->bd", d_logits, keys)
            d_keys = d_logits[:, :, None] * query[:, None, :]
            d_stacked += d_keys @ w_key.values.T
            d_wk = np.einsum("btd,bte->de", stacked, d_keys)
            d_stacked[:, -1, :] += d_query @ w_query.values.T
            d_wq = stacked[:, -1, :].T @ d_query
            step_grads = tuple(d_stacked[:, t, :] for t in range(len(xs)))
            return step_grads + (d_wq, d_wk)

        tape.record(out, tuple(xs) + (w_query, w_key), rule)
    return out


def attention_encode_steps(
    tape: Tape | None,
    steps: Sequence[Tensor],
    pad_mask: np.ndarray,
    weights: AttentionWeights,
) -> Tensor:
    """Position-enriched causal attention readout at the last position."""
    dim = steps[0].values.shape[1]
    enriched = []
    for t, step in enumerate(steps):
        pos_row = ad.reshape(tape, ad.take_rows(tape, weights.positions, np.array([t])), (dim,))
        enriched.append(ad.add_rowvec(tape, step, pos_row))
    attn = _attend_last(tape, enriched, weights.w_query, weights.w_key, pad_mask)
    residual = ad.add(tape, enriched[-1], attn)
    hidden = ad.relu(tape, ad.add_rowvec(tape, ad.matmul(tape, residual, weights.ff_w1),
                                         weights.ff_b1))
    ff_out = ad.add_rowvec(tape, ad.matmul(tape, hidden, weights.ff_w2), weights.ff_b2)
    return ad.add(tape, residual, ff_out)


def attention_encode(
    tape: Tape | None,
    embedded: Tensor,
    weights: AttentionWeights,
    pad_mask: np.ndarray | None = None,
) -> Tensor:
    """Single-sequence wrapper: (T, D) embedded steps -> (D,) readout."""
    seq_len, dim = embedded.values.shape
    if pad_mask is None:
        pad_mask = np.zeros((1, seq_len), dtype=bool)
    else:
        pad_mask = np.asarray(pad_mask, dtype=bool).reshape(1, seq_len)
    steps = [ad.take_rows(tape, embedded, np.array([t])) for t in range(seq_len)]
    return ad.reshape(tape, attention_encode_steps(tape, steps, pad_mask, weights), (dim,))


def apply_transform(tape: Tape | None, layer: AffineTransform, h: Tensor) -> Tensor:
    """Affine map h @ W + b on (B, D) rows."""
    return ad.add_rowvec(tape, ad.matmul(tape, h, layer.weight), layer.bias)


def transform_item_to_user(tape: Tape | None, params: ModelParams, h_item: Tensor) -> Tensor:
    """Project the item-sequence state into the target-user space."""
    return apply_transform(tape, params.item_to_user, h_item)


def transform_user_to_item(tape: Tape | None, params: ModelParams, h_user: Tensor) -> Tensor:
    """Project the user-sequence state into the target-item space."""
    return apply_transform(tape, params.user_to_item, h_user)


def predict_tower(tape: Tape | None, tower: MlpTower, left: Tensor, right: Tensor) -> Tensor:
    """sigmoid(MLP(left || right)) as a (B, 1) probability column."""
    joint = ad.concat(tape, left, right, axis=1)
    h1 = ad.relu(tape, ad.add_rowvec(tape, ad.matmul(tape, joint, tower.w1), tower.b1))
    h2 = ad.relu(tape, ad.add_rowvec(tape, ad.matmul(tape, h1, tower.w2), tower.b2))
    return ad.sigmoid(tape, ad.add_rowvec(tape, ad.matmul(tape, h2, tower.w3), tower.b3))


def logloss(tape: Tape | None, probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped away from {0, 1}."""
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    p = probs.values.reshape(-1)
    if p.shape != labels.shape:
        raise ShapeError(f"logloss: {probs.values.shape} probabilities vs {labels.shape} labels")
    clamped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = labels.astype(np.float64)
    out = Tensor(-np.mean(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped)))
    if tape is not None:
        active = (p == clamped).astype(np.float64)  # clamped entries get zero gradient
        batch = p.shape[0]

        def rule(g):
            dp = -(y / clamped - (1.0 - y) / (1.0 - clamped)) * active / batch
            return (g * dp.reshape(probs.values.shape),)

        tape.record(out, (probs,), rule)
    return out


def _masked_mean_of_rowsums(tape: Tape, parts: list[Tensor], mask: np.ndarray, weight: float) -> Tensor:
    mask = mask.astype(np.float64).reshape(-1, 1)
    count = float(mask.sum())
    if count == 0.0:
        return Tensor(0.0, constant=True)
    mask_col = Tensor(mask, constant=True)
    total = None
    for part in parts:
        masked = ad.sum_all(tape, ad.mul(tape, part, mask_col))
        total = masked if total is None else ad.add(tape, total, masked)
    return ad.scale(tape, total, weight / count)


def representation_contrastive_loss(
    tape: Tape | None,
    user_repr: Tensor,
    target_user_emb: Tensor,
    item_repr: Tensor,
    target_item_emb: Tensor,
    weight: float,
    mask: np.ndarray | None = None,
) -> Tensor:
    """weight * mean_batch(||U - M_u||^2 + ||V - M_i||^2).

    With ``mask`` given, the mean runs over the masked-in samples only.
    """
    batch = user_repr.values.shape[0]
    if mask is None:
        total = ad.add(tape,
                       ad.squared_l2(tape, user_repr, target_user_emb),
                       ad.squared_l2(tape, item_repr, target_item_emb))
        return ad.scale(tape, total, weight / batch)
    du = ad.sub(tape, user_repr, target_user_emb)
    dv = ad.sub(tape, item_repr, target_item_emb)
    parts = [ad.rowsum(tape, ad.mul(tape, du, du)), ad.rowsum(tape, ad.mul(tape, dv, dv))]
    return _masked_mean_of_rowsums(tape, parts, mask, weight)


def interest_contrastive_loss(
    tape: Tape | None,
    p_item: Tensor,
    p_static: Tensor,
    p_user: Tensor,
    weight: float,
    mask: np.ndarray | None = None,
) -> Tensor:
    """weight * mean_batch((p_item - p_static)^2 + (p_item - p_user)^2)."""
    batch = p_item.values.shape[0]
    d_static = ad.sub(tape, p_item, p_static)
    d_user = ad.sub(tape, p_item, p_user)
    sq_static = ad.mul(tape, d_static, d_static)
    sq_user = ad.mul(tape, d_user, d_user)
    if mask is None:
        total = ad.add(tape, ad.sum_all(tape, sq_static), ad.sum_all(tape, sq_user))
        return ad.scale(tape, total, weight / batch)
    return _masked_mean_of_rowsums(tape, [sq_static, sq_user], mask, weight)


# ---------------------------------------------------------------------------
# full forward pass
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Collated sample arrays: (B, T) id sequences plus targets and labels."""

    item_seq: np.ndarray
    user_seq: np.ndarray
    target_user: np.ndarray
    target_item: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


def collate(samples: Sequence[DualSample]) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    return Batch(
        item_seq=np.array([s.item_seq for s in samples], dtype=np.int64),
        user_seq=np.array([s.user_seq for s in samples], dtype=np.int64),
        target_user=np.array([s.target_user for s in samples], dtype=np.int64),
        target_item=np.array([s.target_item for s in samples], dtype=np.int64),
        labels=np.array([s.label for s in samples], dtype=np.int64),
    )


@dataclass
class ForwardOutputs:
    """Per-sample probabilities, loss components, and encoder states."""

    p_item: np.ndarray
    p_user: np.ndarray
    p_static: np.ndarray
    loss_item: Tensor
    loss_rep: Tensor
    loss_interest: Tensor
    loss_reg: Tensor
    loss_total: Tensor
    h_item: Tensor
    h_user: Tensor


def _encode(tape, config: ModelConfig, encoder, steps, pad_mask) -> Tensor:
    if config.backbone == "gru":
        return gru_encode_steps(tape, steps, encoder)
    return attention_encode_steps(tape, steps, pad_mask, encoder)


def encode_item_history(params: ModelParams, item_seq: np.ndarray) -> np.ndarray:
    """Tape-free item-sequence encoder states for (B, T) id rows."""
    steps = [embed_lookup(None, params.item_emb, item_seq[:, t])
             for t in range(item_seq.shape[1])]
    return _encode(None, params.config, params.item_encoder, steps, item_seq == 0).values


def encode_user_history(params: ModelParams, user_seq: np.ndarray) -> np.ndarray:
    """Tape-free user-sequence encoder states for (B, T) id rows."""
    steps = [embed_lookup(None, params.user_emb, user_seq[:, t])
             for t in range(user_seq.shape[1])]
    return _encode(None, params.config, params.user_encoder, steps, user_seq == 0).values


def tower_probability(tower: MlpTower, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Tape-free tower application on raw (N, D) arrays."""
    return predict_tower(None, tower, Tensor(left), Tensor(right)).values.reshape(-1)


def score_next_item(params: ModelParams, batch: Batch) -> np.ndarray:
    """Next-item probabilities only; the user-centric ranking score."""
    context = encode_item_history(params, batch.item_seq)
    target = params.item_emb.tensor.values[batch.target_item]
    return tower_probability(params.tower_item, context, target)


def score_next_user(params: ModelParams, batch: Batch) -> np.ndarray:
    """Next-user probabilities only; the item-centric ranking score."""
    context = encode_user_history(params, batch.user_seq)
    target = params.user_emb.tensor.values[batch.target_user]
    return tower_probability(params.tower_user, context, target)


def forward(params: ModelParams, batch: Batch, tape: Tape | None = None) -> ForwardOutputs:
    """Run the whole network over a batch and assemble the joint loss."""
    cfg = params.config
    seq_len = cfg.max_seq_len
    if batch.item_seq.shape[1] != seq_len or batch.user_seq.shape[1] != seq_len:
        raise ShapeError(f"batch sequences must have length {seq_len}, "
                         f"got {batch.item_seq.shape[1]} and {batch.user_seq.shape[1]}")
    batch_size = len(batch)

    item_steps = [embed_lookup(tape, params.item_emb, batch.item_seq[:, t]) for t in range(seq_len)]
    user_steps = [embed_lookup(tape, params.user_emb, batch.user_seq[:, t]) for t in range(seq_len)]
    h_item = _encode(tape, cfg, params.item_encoder, item_steps, batch.item_seq == 0)
    h_user = _encode(tape, cfg, params.user_encoder, user_steps, batch.user_seq == 0)

    target_user_emb = embed_lookup(tape, params.user_emb, batch.target_user)
    target_item_emb = embed_lookup(tape, params.item_emb, batch.target_item)

    p_item = predict_tower(tape, params.tower_item, h_item, target_item_emb)
    p_user = predict_tower(tape, params.tower_user, h_user, target_user_emb)
    if cfg.static_tower_input == "embeddings":
        p_static = predict_tower(tape, params.tower_static, target_user_emb, target_item_emb)
    else:
        p_static = predict_tower(tape, params.tower_static, h_user, h_item)

    loss_item = logloss(tape, p_item, batch.labels)

    aux_mask = None if cfg.aux_on_negatives else (batch.labels == 1)
    if cfg.lambda_e > 0.0:
        user_repr = transform_item_to_user(tape, params, h_item)
        item_repr = transform_user_to_item(tape, params, h_user)
        loss_rep = representation_contrastive_loss(
            tape, user_repr, target_user_emb, item_repr, target_item_emb,
            cfg.lambda_e, aux_mask)
    else:
        loss_rep = Tensor(0.0, constant=True)
    if cfg.lambda_p > 0.0:
        loss_interest = interest_contrastive_loss(
            tape, p_item, p_static, p_user, cfg.lambda_p, aux_mask)
    else:
        loss_interest = Tensor(0.0, constant=True)

    if cfg.lambda_reg > 0.0:
        zeros_u = Tensor(np.zeros_like(params.user_emb.tensor.values), constant=True)
        zeros_i = Tensor(np.zeros_like(params.item_emb.tensor.values), constant=True)
        penalty = ad.add(tape,
                         ad.squared_l2(tape, params.user_emb.tensor, zeros_u),
                         ad.squared_l2(tape, params.item_emb.tensor, zeros_i))
        loss_reg = ad.scale(tape, penalty, cfg.lambda_reg)
    else:
        loss_reg = Tensor(0.0, constant=True)

    loss_total = ad.add(tape, ad.add(tape, loss_item, loss_rep),
                        ad.add(tape, loss_interest, loss_reg))
    return ForwardOutputs(
        p_item=p_item.values.reshape(-1).copy(),
        p_user=p_user.values.reshape(-1).copy(),
        p_static=p_static.values.reshape(-1).copy(),
        loss_item=loss_item,
        loss_rep=loss_rep,
        loss_interest=loss_interest,
        loss_reg=loss_reg,
        loss_total=loss_total,
        h_item=h_item,
        h_user=h_user,
    )
