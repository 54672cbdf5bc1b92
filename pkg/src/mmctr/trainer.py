"""Deterministic mini-batch training, evaluation metrics, checkpoint I/O.

One line per epoch goes to stdout: ``epoch=<n> loss=<float>`` plus
`` auc=<float> logloss=<float>`` on evaluation epochs. Checkpoints are a
single JSON document (format version "1") with float32 storage precision;
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import (
    SEED_TAG_NEGATIVES,
    Vocab,
    build_vocab,
    negative_ad_indices,
    records_to_indices,
)
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    DomainError,
    FormatError,
    LengthMismatchError,
    NonFiniteLossError,
    VersionError,
)
from .geometry import ManifoldKind, ManifoldSpec
from .model import (
    EmbeddingTable,
    EntityKind,
    FusionParams,
    ModelConfig,
    ModelState,
    backward,
    bce_loss,
    clip_probs,
    forward_batch,
    init_embeddings,
)
from .optim import OptimizerConfig, UpdateMode, step_rows

SEED_TAG_SHUFFLE = 4
CHECKPOINT_VERSION = "1"
MIN_MANIFOLD_SCALE = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    optimizer: OptimizerConfig
    model: ModelConfig
    eval_every: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass(frozen=True)
class Metrics:
    auc: float
    logloss: float
    num_eval: int


@dataclass
class Checkpoint:
    state: ModelState
    vocab: Vocab


def auc(scores, labels) -> float:
    """Mann-Whitney pair statistic with ties counted 0.5, via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatchError("scores and labels must be 1-d and equal length")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.shape[0] - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    order = np.argsort(s, kind="mergesort")
    ss = s[order]
    n = s.shape[0]
    starts = np.empty(n, dtype=bool)
    starts[0] = True
    starts[1:] = ss[1:] != ss[:-1]
    group = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    counts = np.diff(np.append(first, n))
    avg_rank = first + (counts - 1) / 2.0 + 1.0  # 1-based
    ranks = np.empty(n)
    ranks[order] = avg_rank[group]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _clip_block(g: np.ndarray, clip: float | None) -> np.ndarray:
    if clip is None:
        return g
    n = float(np.sqrt(np.sum(g * g)))
    return g * (clip / n) if n > clip else g


def _apply_updates(state: ModelState, res, opt: OptimizerConfig):
    mode = state.config.update_mode
    for m, spec in enumerate(state.config.manifolds):
        for tables, grads in (
            (state.user_tables, res.user_grads),
            (state.ad_tables, res.ad_grads),
        ):
            rows_idx, g = grads[m]
            if rows_idx.size == 0:
                continue
            x = tables[m].rows[rows_idx].astype(np.float64)
            tables[m].rows[rows_idx] = step_rows(x, g, spec, opt, mode).astype(
                np.float32
            )
    fp, fg = state.fusion, res.fusion
    lr = opt.learning_rate
    fp.manifold_bias = (
        fp.manifold_bias.astype(np.float64)
        - lr * _clip_block(fg.manifold_bias, opt.grad_clip)
    ).astype(np.float32)
    new_scale = fp.manifold_scale.astype(np.float64) - lr * _clip_block(
        fg.manifold_scale, opt.grad_clip
    )
    fp.manifold_scale = np.maximum(new_scale, MIN_MANIFOLD_SCALE).astype(np.float32)
    fp.attention_weights = (
        fp.attention_weights.astype(np.float64)
        - lr * _clip_block(fg.attention_weights, opt.grad_clip)
    ).astype(np.float32)
    b0 = float(fp.global_bias) - lr * float(
        np.clip(fg.global_bias, -opt.grad_clip, opt.grad_clip)
        if opt.grad_clip is not None
        else fg.global_bias
    )
    fp.global_bias = np.float32(b0)


def train(cfg: TrainConfig, records, eval_records=None, emit=print) -> Checkpoint:
    """Run the full training loop and return the final checkpoint.

    Runs epochs x batches of negative sampling -> backward -> manifold
    updates. Bit-identical results for identical (cfg, records); the
    deterministic flag is documentation of that contract (updates are
    always applied single-threaded in batch order here).
    """
    records = list(records)
    if not records:
        raise ConfigError("training needs at least one record")
    vocab = build_vocab(records)
    if vocab.num_ads < 2:
        raise ConfigError("training needs at least 2 distinct ads for sampling")
    state = init_embeddings(cfg.model, vocab.num_users, vocab.num_ads)
    ckpt = Checkpoint(state, vocab)
    users, ads, labels = records_to_indices(records, vocab)
    n = users.shape[0]
    seed = cfg.model.seed
    k = cfg.model.negatives_per_positive
    global_batch = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = np.random.default_rng([seed + epoch, SEED_TAG_SHUFFLE]).permutation(n)
        loss_sum = 0.0
        seen = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            sel = perm[start : start + cfg.batch_size]
            bu, ba, by = users[sel], ads[sel], labels[sel]
            pos = by == 1
            if pos.any():
                rng = np.random.default_rng([seed + epoch, SEED_TAG_NEGATIVES, bi])
                neg = negative_ad_indices(ba[pos], vocab.num_ads, k, rng)
                bu = np.concatenate([bu, np.repeat(bu[pos], k)])
                ba = np.concatenate([ba, neg.reshape(-1)])
                by = np.concatenate([by, np.zeros(neg.size)])
            res = backward(state, bu, ba, by)
            if not np.isfinite(res.loss):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, batch {global_batch}",
                    batch_index=global_batch,
                )
            _apply_updates(state, res, cfg.optimizer)
            loss_sum += res.loss * by.shape[0]
            seen += by.shape[0]
            global_batch += 1
        line = f"epoch={epoch} loss={loss_sum / seen:.6f}"
        if eval_records is not None and epoch % cfg.eval_every == 0:
            metrics = evaluate(ckpt, eval_records)
            line += f" auc={metrics.auc:.6f} logloss={metrics.logloss:.6f}"
        if emit is not None:
            emit(line)
    return ckpt


def evaluate(ckpt: Checkpoint, records) -> Metrics:
    """Score records through the model; unknown entities are skipped and counted."""
    vocab = ckpt.vocab
    known = [
        r for r in records if r.user in vocab.user_index and r.ad in vocab.ad_index
    ]
    if not known:
        raise DegenerateLabelsError(
            f"no evaluable records (num_eval=0, skipped={len(records)})"
        )
    users, ads, labels = records_to_indices(known, vocab)
    probs = clip_probs(forward_batch(ckpt.state, users, ads).probs)
    return Metrics(
        auc=auc(probs, labels.astype(np.intp)),
        logloss=bce_loss(probs, labels),
        num_eval=len(known),
    )


# ---------------------------------------------------------------------------
# Checkpoint serialization (JSON, format version "1", float32 precision)
# ---------------------------------------------------------------------------


def _table_to_flat(table: EmbeddingTable) -> list:
    return [float(v) for v in table.rows.reshape(-1)]


def checkpoint_to_doc(ckpt: Checkpoint) -> dict:
    cfgm = ckpt.state.config
    fp = ckpt.state.fusion
    return {
        "version": CHECKPOINT_VERSION,
        "model_config": {
            "negatives_per_positive": cfgm.negatives_per_positive,
            "init_scale": cfgm.init_scale,
            "update_mode": cfgm.update_mode.value,
            "seed": cfgm.seed,
        },
        "manifolds": [
            {"kind": s.kind.value, "dim": s.dim, "curvature": s.curvature}
            for s in cfgm.manifolds
        ],
        "vocab": {"users": list(ckpt.vocab.users), "ads": list(ckpt.vocab.ads)},
        "user_tables": [_table_to_flat(t) for t in ckpt.state.user_tables],
        "ad_tables": [_table_to_flat(t) for t in ckpt.state.ad_tables],
        "fusion": {
            "manifold_bias": [float(v) for v in fp.manifold_bias],
            "manifold_scale": [float(v) for v in fp.manifold_scale],
            "attention_weights": [
                [float(v) for v in row] for row in fp.attention_weights
            ],
            "global_bias": float(fp.global_bias),
        },
    }


def save_checkpoint(ckpt: Checkpoint, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_to_doc(ckpt), fh, indent=2)
        fh.write("\n")


def _expect(doc: dict, key: str, kind, path: str):
    if not isinstance(doc, dict) or key not in doc:
        raise FormatError(f"missing field {path}.{key}")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise FormatError(f"field {path}.{key} must be a number")
        return float(val)
    if not isinstance(val, kind) or (kind is int and isinstance(val, bool)):
        raise FormatError(f"field {path}.{key} has wrong type")
    return val


def _check_keys(doc: dict, allowed: set, path: str):
    extra = set(doc) - allowed
    if extra:
        raise FormatError(f"unknown field {path}.{sorted(extra)[0]}")


def _doc_to_checkpoint(doc: dict) -> Checkpoint:
    if not isinstance(doc, dict):
        raise FormatError("checkpoint root must be an object")
    version = _expect(doc, "version", str, "$")
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version!r}")
    _check_keys(
        doc,
        {"version", "model_config", "manifolds", "vocab", "user_tables", "ad_tables", "fusion"},
        "$",
    )
    mc = _expect(doc, "model_config", dict, "$")
    _check_keys(mc, {"negatives_per_positive", "init_scale", "update_mode", "seed"}, "$.model_config")
    manifolds = []
    raw_manifolds = _expect(doc, "manifolds", list, "$")
    for i, item in enumerate(raw_manifolds):
        path = f"$.manifolds[{i}]"
        if not isinstance(item, dict):
            raise FormatError(f"field {path} must be an object")
        _check_keys(item, {"kind", "dim", "curvature"}, path)
        try:
            kind = ManifoldKind(_expect(item, "kind", str, path))
        except ValueError as exc:
            raise FormatError(f"field {path}.kind: {exc}") from None
        try:
            manifolds.append(
                ManifoldSpec(kind, _expect(item, "dim", int, path), _expect(item, "curvature", float, path))
            )
        except ConfigError as exc:
            raise FormatError(f"field {path}: {exc}") from None
    try:
        config = ModelConfig(
            manifolds=tuple(manifolds),
            negatives_per_positive=_expect(mc, "negatives_per_positive", int, "$.model_config"),
            init_scale=_expect(mc, "init_scale", float, "$.model_config"),
            update_mode=UpdateMode(_expect(mc, "update_mode", str, "$.model_config")),
            seed=_expect(mc, "seed", int, "$.model_config"),
        )
    except (ConfigError, ValueError) as exc:
        raise FormatError(f"field $.model_config: {exc}") from None

    vc = _expect(doc, "vocab", dict, "$")
    _check_keys(vc, {"users", "ads"}, "$.vocab")
    users = _expect(vc, "users", list, "$.vocab")
    ads = _expect(vc, "ads", list, "$.vocab")
    vocab = Vocab()
    for uid in users:
        if not isinstance(uid, str):
            raise FormatError("field $.vocab.users must contain strings")
        vocab.user_index[uid] = len(vocab.users)
        vocab.users.append(uid)
        vocab.user_counts.append(0)
    for aid in ads:
        if not isinstance(aid, str):
            raise FormatError("field $.vocab.ads must contain strings")
        vocab.ad_index[aid] = len(vocab.ads)
        vocab.ads.append(aid)
        vocab.ad_counts.append(0)
    if len(vocab.user_index) != len(users) or len(vocab.ad_index) != len(ads):
        raise FormatError("field $.vocab: duplicate ids")

    def tables_from(key: str, count: int, entity: EntityKind):
        raw = _expect(doc, key, list, "$")
        if len(raw) != len(manifolds):
            raise FormatError(f"field $.{key}: expected {len(manifolds)} tables")
        tables = []
        for m, flat in enumerate(raw):
            spec = manifolds[m]
            if not isinstance(flat, list) or len(flat) != count * spec.dim:
                raise FormatError(
                    f"field $.{key}[{m}]: expected {count * spec.dim} numbers"
                )
            arr = np.array(flat, dtype=np.float32).reshape(count, spec.dim)
            try:
                tables.append(EmbeddingTable(spec, arr, entity))
            except (ConfigError, DomainError) as exc:
                raise FormatError(f"field $.{key}[{m}]: {exc}") from None
        return tables

    if not users or not ads:
        raise FormatError("field $.vocab: empty vocabulary")
    user_tables = tables_from("user_tables", len(users), EntityKind.USER)
    ad_tables = tables_from("ad_tables", len(ads), EntityKind.AD)

    fu = _expect(doc, "fusion", dict, "$")
    _check_keys(
        fu,
        {"manifold_bias", "manifold_scale", "attention_weights", "global_bias"},
        "$.fusion",
    )
    mm = len(manifolds)
    try:
        fusion = FusionParams(
            manifold_bias=np.array(_expect(fu, "manifold_bias", list, "$.fusion"), dtype=np.float32),
            manifold_scale=np.array(_expect(fu, "manifold_scale", list, "$.fusion"), dtype=np.float32),
            attention_weights=np.array(_expect(fu, "attention_weights", list, "$.fusion"), dtype=np.float32),
            global_bias=np.float32(_expect(fu, "global_bias", float, "$.fusion")),
        )
    except (ConfigError, ValueError) as exc:
        raise FormatError(f"field $.fusion: {exc}") from None
    if fusion.num_manifolds != mm:
        raise FormatError("field $.fusion: manifold count mismatch")

    state = ModelState(config, user_tables, ad_tables, fusion)
    return Checkpoint(state, vocab)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid checkpoint JSON: {exc}") from None
    return _doc_to_checkpoint(doc)
