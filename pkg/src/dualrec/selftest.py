"""Built-in verification: gradient checks, metric oracles, invariant suites.

The gradient checks compare every op's analytic backward rule against central
finite differences of the forward value; the finite-difference side never
touches the tape machinery, so the two routes are independent.  Metric
oracles compare the production rank-based AUC against a brute-force pairwise
count.  The invariant suite re-checks the structural guarantees (frozen pad
row, left-pad invariance, loss signs, Adam behavior, determinism).
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import metrics as mt
from . import model as md
from .autodiff import Tape, Tensor, backward
from .model import Batch, ModelConfig, ModelParams, forward
from .optim import AdamState, adam_step
from .rng import SeededRng, xavier_init

DEFAULT_FD_STEP = 1e-5
REL_ERR_FLOOR = 1e-5


def finite_difference(f: Callable[[], float], arrays: list[np.ndarray],
                      h: float = DEFAULT_FD_STEP) -> list[np.ndarray]:
    """Central-difference gradient of f() w.r.t. every entry of each array.

    Perturbs the arrays in place and restores them, so ``f`` must read the
    same array objects on every call.
    """
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def max_rel_error(analytic: list[np.ndarray], numeric: list[np.ndarray],
                  floor: float = REL_ERR_FLOOR) -> float:
    """Worst relative error, with a small absolute floor in the denominator."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _weighted_loss(tape, out: Tensor, weights: np.ndarray) -> Tensor:
    """Random-weight contraction so upstream gradients are non-uniform."""
    return ad.sum_all(tape, ad.mul(tape, out, Tensor(weights, constant=True)))


def _away_from_kinks(values: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    near = np.abs(values) < margin
    values[near] = margin * np.where(values[near] >= 0, 1.0, -1.0)
    return values


# ---------------------------------------------------------------------------
# per-op gradient checks
# ---------------------------------------------------------------------------

def _check_op_gradient(name: str, seed: int = 7) -> float:
    """Finite-difference check for one op; returns the max relative error."""
    rng = SeededRng(seed).child(hash(name) % 1000)
    shape = (3, 4)
    a_val = rng.uniform(-1.5, 1.5, shape)
    b_val = rng.uniform(-1.5, 1.5, shape)
    bt_val = b_val.T.copy()
    w = rng.uniform(-1.0, 1.0, shape)

    if name == "relu":
        _away_from_kinks(a_val)

    def run():
        tape = Tape()
        a = Tensor(a_val)
        b = Tensor(b_val)
        if name in ("sigmoid", "tanh", "relu"):
            out = getattr(ad, name)(tape, a)
            inputs = [a]
        elif name in ("add", "sub", "mul"):
            out = getattr(ad, name)(tape, a, b)
            inputs = [a, b]
        elif name == "scale":
            out = ad.scale(tape, a, 0.37)
            inputs = [a]
        elif name == "add_rowvec":
            vec = Tensor(b_val[0])
            out = ad.add_rowvec(tape, a, vec)
            inputs = [a, vec]
        elif name == "matmul":
            m2 = Tensor(bt_val)
            out = ad.matmul(tape, a, m2)  # (3,4) @ (4,3)
            inputs = [a, m2]
        elif name == "transpose":
            out = ad.transpose(tape, a)
            inputs = [a]
        elif name == "concat":
            out = ad.concat(tape, a, b, axis=1)
            inputs = [a, b]
        elif name == "reshape":
            out = ad.reshape(tape, a, (4, 3))
            inputs = [a]
        elif name == "take_rows":
            out = ad.take_rows(tape, a, np.array([0, 2, 2, 1]))
            inputs = [a]
        elif name == "rowsum":
            out = ad.rowsum(tape, a)
            inputs = [a]
        elif name == "sum_all":
            out = ad.sum_all(tape, a)
            inputs = [a]
        elif name == "squared_l2":
            out = ad.squared_l2(tape, a, b)
            inputs = [a, b]
        else:
            raise KeyError(f"no gradient check defined for op '{name}'")
        if out.values.shape == ():
            loss = ad.scale(tape, out, 1.37)
        else:
            loss = _weighted_loss(tape, out, np.resize(w, out.values.shape))
        return tape, loss, inputs

    tape, loss, inputs = run()
    backward(loss, tape)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.values) for t in inputs]
    arrays = [t.values for t in inputs]
    numeric = finite_difference(lambda: run()[1].item(), arrays)
    return max_rel_error(analytic, numeric)


CORE_OPS = ("sigmoid", "tanh", "relu", "add", "sub", "mul", "scale", "add_rowvec",
            "matmul", "transpose", "concat", "reshape", "take_rows", "rowsum",
            "sum_all", "squared_l2")


def _check_embed_lookup_gradient(seed: int = 11) -> float:
    rng = SeededRng(seed)
    table_val = rng.uniform(-1, 1, (5, 3))
    table_val[0, :] = 0.0
    ids = np.array([[0, 2, 4], [2, 2, 1]])
    w = rng.uniform(-1, 1, (2, 3, 3))

    def run():
        tape = Tape()
        table = md.EmbeddingTable("t", Tensor(table_val))
        out = md.embed_lookup(tape, table, ids)
        loss = _weighted_loss(tape, out, w)
        return tape, loss, table.tensor

    tape, loss, tensor = run()
    backward(loss, tape)
    analytic = tensor.grad[1:]  # row 0 is frozen by contract
    numeric = finite_difference(lambda: run()[1].item(), [table_val])[0][1:]
    return max_rel_error([analytic], [numeric])


def _check_logloss_gradient(seed: int = 13) -> float:
    rng = SeededRng(seed)
    z_val = rng.uniform(-2, 2, (6, 1))
    labels = np.array([1, 0, 1, 1, 0, 0])

    def run():
        tape = Tape()
        z = Tensor(z_val)
        loss = md.logloss(tape, ad.sigmoid(tape, z), labels)
        return tape, loss, z

    tape, loss, z = run()
    backward(loss, tape)
    numeric = finite_difference(lambda: run()[1].item(), [z_val])
    return max_rel_error([z.grad], numeric)


def _check_gru_step_gradient(seed: int = 15) -> float:
    rng = SeededRng(seed)
    batch, dim = 3, 4
    e_val = rng.uniform(-1, 1, (batch, dim))
    h_val = rng.uniform(-1, 1, (batch, dim))
    w_vals = [rng.uniform(-1, 1, (dim, 2 * dim)) for _ in range(3)]
    w = rng.uniform(-1, 1, (batch, dim))

    def run():
        tape = Tape()
        e, h = Tensor(e_val), Tensor(h_val)
        weights = md.GruWeights(Tensor(w_vals[0]), Tensor(w_vals[1]), Tensor(w_vals[2]))
        out = md.gru_step(tape, e, h, weights)
        loss = _weighted_loss(tape, out, w)
        return tape, loss, [e, h, weights.w_update, weights.w_reset, weights.w_cand]

    tape, loss, tensors = run()
    backward(loss, tape)
    analytic = [t.grad for t in tensors]
    numeric = finite_difference(lambda: run()[1].item(), [e_val, h_val] + w_vals)
    return max_rel_error(analytic, numeric)


def _check_attention_gradient(seed: int = 17) -> float:
    rng = SeededRng(seed)
    batch, seq_len, dim = 3, 4, 5
    step_vals = [rng.uniform(-1, 1, (batch, dim)) for _ in range(seq_len)]
    pad_mask = np.zeros((batch, seq_len), dtype=bool)
    pad_mask[0, :2] = True  # one sample starts with pads
    for t in range(2):
        step_vals[t][0, :] = 0.0
    weights_arrays = {
        "positions": rng.uniform(-1, 1, (seq_len, dim)),
        "w_query": rng.uniform(-1, 1, (dim, dim)),
        "w_key": rng.uniform(-1, 1, (dim, dim)),
        "ff_w1": rng.uniform(-1, 1, (dim, dim)),
        "ff_b1": rng.uniform(-1, 1, (dim,)),
        "ff_w2": rng.uniform(-1, 1, (dim, dim)),
        "ff_b2": rng.uniform(-1, 1, (dim,)),
    }
    w = rng.uniform(-1, 1, (batch, dim))

    def run():
        tape = Tape()
        weights = md.AttentionWeights(**{k: Tensor(v) for k, v in weights_arrays.items()})
        steps = [Tensor(v) for v in step_vals]
        out = md.attention_encode_steps(tape, steps, pad_mask, weights)
        loss = _weighted_loss(tape, out, w)
        return tape, loss, steps, weights

    tape, loss, steps, weights = run()
    backward(loss, tape)
    tensors = list(steps) + [getattr(weights, k) for k in weights_arrays]
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.values) for t in tensors]
    arrays = step_vals + list(weights_arrays.values())
    numeric = finite_difference(lambda: run()[1].item(), arrays)
    return max_rel_error(analytic, numeric)


def _random_batch(config: ModelConfig, rng: SeededRng) -> Batch:
    """Left-padded random id sequences with mixed labels."""
    batch, seq_len = 3, config.max_seq_len
    item_seq = np.zeros((batch, seq_len), dtype=np.int64)
    user_seq = np.zeros((batch, seq_len), dtype=np.int64)
    for row in range(batch):
        n_real = int(rng.integers(seq_len)) + 1
        item_seq[row, seq_len - n_real:] = rng.integers(config.n_items, size=n_real) + 1
        n_real_u = int(rng.integers(seq_len)) + 1
        user_seq[row, seq_len - n_real_u:] = rng.integers(config.n_users, size=n_real_u) + 1
    return Batch(
        item_seq=item_seq,
        user_seq=user_seq,
        target_user=rng.integers(config.n_users, size=batch) + 1,
        target_item=rng.integers(config.n_items, size=batch) + 1,
        labels=np.array([1, 0, 1][:batch], dtype=np.int64),
    )


def full_model_gradient_check(
    backbone: str = "gru",
    seed: int = 3,
    mlp_hidden: tuple[int, int] = (10, 7),
    lambda_e: float = 0.1,
    lambda_p: float = 0.1,
    lambda_reg: float = 1e-5,
    static_tower_input: str = "embeddings",
    aux_on_negatives: bool = True,
) -> tuple[float, int]:
    """End-to-end gradient check of the joint loss on a tiny model.

    Returns (max relative error, number of entries checked).  Row 0 of each
    embedding table is excluded: it is a structural constant, not a
    parameter, and the forward value does depend on its (frozen) contents.
    """
    config = ModelConfig(
        n_users=6, n_items=7, embed_dim=4, max_seq_len=5, mlp_hidden=mlp_hidden,
        backbone=backbone, static_tower_input=static_tower_input,
        lambda_e=lambda_e, lambda_p=lambda_p, lambda_reg=lambda_reg,
        aux_on_negatives=aux_on_negatives,
    )
    params = ModelParams.build(config, seed)
    batch = _random_batch(config, SeededRng(seed).child(99))

    tape = Tape()
    out = forward(params, batch, tape)
    params.zero_grads()
    backward(out.loss_total, tape)

    def loss_value() -> float:
        return forward(params, batch, tape=None).loss_total.item()

    worst = 0.0
    checked = 0
    for name, tensor in params.named_tensors().items():
        numeric = finite_difference(loss_value, [tensor.values])[0]
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.values)
        if name in ("user_emb", "item_emb"):
            numeric = numeric[1:]
            analytic = analytic[1:]
        worst = max(worst, max_rel_error([analytic], [numeric]))
        checked += numeric.size
    return worst, checked


# ---------------------------------------------------------------------------
# metric oracles
# ---------------------------------------------------------------------------

def auc_bruteforce(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n_pos * n_neg) pairwise AUC; the independent oracle for the rank form."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes")
    wins = 0.0
    for p in pos:
        wins += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return wins / (len(pos) * len(neg))


def _metric_oracle_checks() -> list[tuple[str, Callable[[], None]]]:
    def auc_vs_bruteforce():
        rng = SeededRng(23)
        for trial in range(200):
            n = int(rng.integers(18)) + 2
            labels = (rng.random(n) < 0.4).astype(int)
            if labels.sum() in (0, n):
                labels[0] = 1
                labels[-1] = 0
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            got = mt.auc(scores, labels)
            want = auc_bruteforce(scores, labels)
            assert abs(got - want) <= 1e-12, f"trial {trial}: {got} vs {want}"

    def gauc_fixture():
        ga = mt.ScoredGroup(1, np.array([0.9, 0.8, 0.1, 0.2]), np.array([1, 1, 0, 0]))
        gb = mt.ScoredGroup(2, np.array([0.5, 0.5]), np.array([1, 0]))
        got = mt.gauc([ga, gb])
        assert abs(got - (2 * 1.0 + 1 * 0.5) / 3) <= 1e-12, got

    def mrr_fixture():
        g1 = mt.ScoredGroup(1, np.array([0.9, 0.1]), np.array([1, 0]))  # rank 1
        g2 = mt.ScoredGroup(2, np.array([0.1, 0.9, 0.8, 0.7]), np.array([1, 0, 0, 0]))  # rank 4
        got = mt.mrr([g1, g2])
        assert abs(got - 0.625) <= 1e-12, got

    def ndcg_fixtures():
        top = mt.ScoredGroup(1, np.array([0.9, 0.1]), np.array([1, 0]))
        assert abs(mt.ndcg_at_k([top], 10) - 1.0) <= 1e-12
        third = mt.ScoredGroup(1, np.array([0.3, 0.9, 0.8]), np.array([1, 0, 0]))
        assert abs(mt.ndcg_at_k([third], 10) - 0.5) <= 1e-12
        scores = np.concatenate([[0.01], np.linspace(1.0, 0.5, 11)])
        labels = np.array([1] + [0] * 11)
        eleventh = mt.ScoredGroup(1, scores, labels)
        assert mt.ndcg_at_k([eleventh], 10) == 0.0

    return [
        ("auc vs brute force", auc_vs_bruteforce),
        ("gauc weighted fixture", gauc_fixture),
        ("mrr fixture", mrr_fixture),
        ("ndcg fixtures", ndcg_fixtures),
    ]


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def _invariant_checks() -> list[tuple[str, Callable[[], None]]]:
    def pad_row_frozen():
        config = ModelConfig(n_users=8, n_items=9, embed_dim=4, max_seq_len=4,
                             mlp_hidden=(6, 5), lambda_e=0.1, lambda_p=0.1, lambda_reg=1e-4)
        params = ModelParams.build(config, seed=5)
        named = params.named_tensors()
        adam = AdamState(lr=0.01)
        rng = SeededRng(6)
        for _ in range(30):
            batch = _random_batch(config, rng)
            tape = Tape()
            out = forward(params, batch, tape)
            params.zero_grads()
            backward(out.loss_total, tape)
            adam_step(named, adam)
        assert np.all(params.user_emb.tensor.values[0] == 0.0), "user pad row moved"
        assert np.all(params.item_emb.tensor.values[0] == 0.0), "item pad row moved"

    def left_pad_invariance():
        rng = SeededRng(8)
        for _ in range(100):
            dim = int(rng.integers(5)) + 1
            weights = md.GruWeights(Tensor(rng.uniform(-1, 1, (dim, 2 * dim))),
                                    Tensor(rng.uniform(-1, 1, (dim, 2 * dim))),
                                    Tensor(rng.uniform(-1, 1, (dim, 2 * dim))))
            n_real = int(rng.integers(4)) + 1
            n_pad = int(rng.integers(4))
            suffix = rng.uniform(-1, 1, (n_real, dim))
            padded = np.vstack([np.zeros((n_pad, dim)), suffix])
            h_pad = md.gru_encode(None, Tensor(padded), weights)
            h_raw = md.gru_encode(None, Tensor(suffix), weights)
            assert np.max(np.abs(h_pad.values - h_raw.values)) <= 1e-12

    def contrastive_losses_sign():
        rng = SeededRng(9)
        u, mu = Tensor(rng.uniform(-1, 1, (4, 3))), Tensor(rng.uniform(-1, 1, (4, 3)))
        v, mi = Tensor(rng.uniform(-1, 1, (4, 3))), Tensor(rng.uniform(-1, 1, (4, 3)))
        assert md.representation_contrastive_loss(None, u, mu, v, mi, 1.0).item() >= 0.0
        zero = md.representation_contrastive_loss(None, u, Tensor(u.values.copy()),
                                                  v, Tensor(v.values.copy()), 1.0)
        assert zero.item() == 0.0
        p = Tensor(rng.uniform(0.1, 0.9, (4, 1)))
        same = md.interest_contrastive_loss(None, p, Tensor(p.values.copy()),
                                            Tensor(p.values.copy()), 1.0)
        assert same.item() == 0.0
        q = Tensor(rng.uniform(0.1, 0.9, (4, 1)))
        r = Tensor(rng.uniform(0.1, 0.9, (4, 1)))
        assert md.interest_contrastive_loss(None, p, q, r, 1.0).item() >= 0.0

    def adam_behavior():
        for magnitude in (1e-3, 1.0, 1e3):
            t = Tensor(np.zeros((2, 2)))
            t.grad = np.full((2, 2), magnitude)
            state = AdamState(lr=0.001)
            adam_step({"p": t}, state)
            assert np.all(np.abs(np.abs(t.values) - 0.001) < 1e-6), \
                f"first step not ~lr for grad {magnitude}"
        t = Tensor(np.ones((2, 2)))
        state = AdamState(lr=0.1)
        adam_step({"p": t}, state)  # grad None counts as zero
        assert np.all(t.values == 1.0) and state.t == 1

    def xavier_contract():
        rng = SeededRng(10)
        tensor = xavier_init((3, 3), rng)
        assert np.all(np.abs(tensor.values) <= 1.0)  # sqrt(6/6) = 1
        big = xavier_init((32, 32), SeededRng(11))
        bound = np.sqrt(6.0 / 64.0)
        assert np.all(np.abs(big.values) <= bound)
        twin_a = xavier_init((4, 5), SeededRng(12))
        twin_b = xavier_init((4, 5), SeededRng(12))
        assert np.array_equal(twin_a.values, twin_b.values)

    def training_step_determinism():
        config = ModelConfig(n_users=8, n_items=9, embed_dim=4, max_seq_len=4,
                             mlp_hidden=(6, 5), lambda_e=0.1, lambda_p=0.1)
        snapshots = []
        for _ in range(2):
            params = ModelParams.build(config, seed=13)
            named = params.named_tensors()
            adam = AdamState(lr=0.01)
            rng = SeededRng(14)
            for _ in range(3):
                batch = _random_batch(config, rng)
                tape = Tape()
                out = forward(params, batch, tape)
                params.zero_grads()
                backward(out.loss_total, tape)
                adam_step(named, adam)
            snapshots.append({k: t.values.copy() for k, t in named.items()})
        for key in snapshots[0]:
            assert np.array_equal(snapshots[0][key], snapshots[1][key]), f"{key} diverged"

    return [
        ("pad row frozen through training", pad_row_frozen),
        ("gru left-pad invariance", left_pad_invariance),
        ("contrastive losses non-negative, zero at equality", contrastive_losses_sign),
        ("adam zero-grad no-op and first-step scale", adam_behavior),
        ("xavier bounds and determinism", xavier_contract),
        ("training step determinism", training_step_determinism),
    ]


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

def _gradient_checks() -> list[tuple[str, Callable[[], None]]]:
    checks: list[tuple[str, Callable[[], None]]] = []

    def op_check(op_name):
        def check():
            err = _check_op_gradient(op_name)
            assert err < 1e-6, f"op '{op_name}': max relative error {err:.3e}"
        return check

    for op_name in CORE_OPS:
        checks.append((f"op {op_name}", op_check(op_name)))

    def embed_check():
        err = _check_embed_lookup_gradient()
        assert err < 1e-6, f"op 'embed_lookup': max relative error {err:.3e}"

    def logloss_check():
        err = _check_logloss_gradient()
        assert err < 1e-6, f"op 'logloss': max relative error {err:.3e}"

    def gru_step_check():
        err = _check_gru_step_gradient()
        assert err < 1e-6, f"op 'gru_step': max relative error {err:.3e}"

    def attention_check():
        err = _check_attention_gradient()
        assert err < 1e-4, f"attention encoder: max relative error {err:.3e}"

    def end_to_end(backbone):
        def check():
            err, _ = full_model_gradient_check(backbone=backbone)
            assert err < 1e-4, f"{backbone} model: max relative error {err:.3e}"
        return check

    checks.append(("op embed_lookup", embed_check))
    checks.append(("op logloss", logloss_check))
    checks.append(("op gru_step", gru_step_check))
    checks.append(("attention encoder", attention_check))
    checks.append(("end-to-end gru model", end_to_end("gru")))
    checks.append(("end-to-end attention model", end_to_end("attention")))
    return checks


def run_selftest(emit: Callable[[str], None] = print) -> int:
    """Run all suites; returns 0 if everything passed, 1 otherwise."""
    suites = [
        ("gradient checks", _gradient_checks()),
        ("metric oracles", _metric_oracle_checks()),
        ("invariants", _invariant_checks()),
    ]
    failures = 0
    started = time.perf_counter()
    for suite_name, checks in suites:
        passed = 0
        for check_name, check in checks:
            try:
                check()
                passed += 1
            except AssertionError as exc:
                failures += 1
                emit(f"FAIL [{suite_name}] {check_name}: {exc}")
        emit(f"[{suite_name}] passed {passed}/{len(checks)}")
    emit(f"selftest {'passed' if failures == 0 else 'FAILED'} "
         f"in {time.perf_counter() - started:.1f}s")
    return 0 if failures == 0 else 1
