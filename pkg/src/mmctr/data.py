"""Interaction logs, vocabularies, negative sampling, synthetic tree data.

Log format: UTF-8 CSV without header, one record per line:
``user_id,ad_id,label[,timestamp]`` with label in {0, 1} and timestamp a
decimal integer (epoch seconds). Lines starting with ``#`` and blank lines
are ignored. The synthetic generator also writes ``edges.csv`` with one
``parent_id,child_id`` line per tree edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError

SEED_TAG_NEGATIVES = 2
SEED_TAG_SPLIT = 3


@dataclass(frozen=True)
class InteractionRecord:
    user: str
    ad: str
    label: int
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user or not self.ad:
            raise ConfigError("user and ad ids must be non-empty")
        if self.label not in (0, 1):
            raise ConfigError(f"label must be 0 or 1, got {self.label!r}")


def load_interactions(path) -> list[InteractionRecord]:
    """Parse an interaction log; raises ParseError naming the bad line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) not in (3, 4):
                raise ParseError(
                    f"line {lineno}: expected 3 or 4 fields, got {len(parts)}", lineno
                )
            user, ad, label_s = parts[0], parts[1], parts[2]
            if not user or not ad:
                raise ParseError(f"line {lineno}: empty id", lineno)
            if label_s not in ("0", "1"):
                raise ParseError(
                    f"line {lineno}: label must be 0 or 1, got {label_s!r}", lineno
                )
            ts = None
            if len(parts) == 4:
                try:
                    ts = int(parts[3])
                except ValueError:
                    raise ParseError(
                        f"line {lineno}: bad timestamp {parts[3]!r}", lineno
                    ) from None
            records.append(InteractionRecord(user, ad, int(label_s), ts))
    return records


def write_interactions(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            if r.timestamp is None:
                fh.write(f"{r.user},{r.ad},{r.label}\n")
            else:
                fh.write(f"{r.user},{r.ad},{r.label},{r.timestamp}\n")


@dataclass
class Vocab:
    """First-appearance id <-> dense index bijection plus occurrence counts."""

    users: list = field(default_factory=list)
    ads: list = field(default_factory=list)
    user_index: dict = field(default_factory=dict)
    ad_index: dict = field(default_factory=dict)
    user_counts: list = field(default_factory=list)
    ad_counts: list = field(default_factory=list)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_ads(self) -> int:
        return len(self.ads)


def build_vocab(records) -> Vocab:
    v = Vocab()
    for r in records:
        if r.user not in v.user_index:
            v.user_index[r.user] = len(v.users)
            v.users.append(r.user)
            v.user_counts.append(0)
        if r.ad not in v.ad_index:
            v.ad_index[r.ad] = len(v.ads)
            v.ads.append(r.ad)
            v.ad_counts.append(0)
        v.user_counts[v.user_index[r.user]] += 1
        v.ad_counts[v.ad_index[r.ad]] += 1
    return v


def records_to_indices(records, vocab: Vocab):
    """(user_idx, ad_idx, labels) arrays for records whose ids are in vocab."""
    users = np.array([vocab.user_index[r.user] for r in records], dtype=np.intp)
    ads = np.array([vocab.ad_index[r.ad] for r in records], dtype=np.intp)
    labels = np.array([r.label for r in records], dtype=np.float64)
    return users, ads, labels


def negative_ad_indices(
    positive_ad_idx: np.ndarray, num_ads: int, k: int, rng: np.random.Generator
) -> np.ndarray:
    """(n, k) ads uniform over the vocab excluding each row's positive ad."""
    if num_ads < 2:
        raise ConfigError("negative sampling needs at least 2 ads")
    if k < 1:
        raise ConfigError("k must be >= 1")
    pos = np.asarray(positive_ad_idx, dtype=np.intp)
    draw = rng.integers(0, num_ads - 1, size=(pos.shape[0], k))
    return draw + (draw >= pos[:, None])


def sample_negatives(records, vocab: Vocab, k: int, seed: int):
    """Augment a batch: after each positive record, k uniform non-click records.

    Negatives share the positive's user, exclude its ad, and carry label 0.
    Deterministic for a fixed seed.
    """
    if vocab.num_ads < 2:
        raise ConfigError("negative sampling needs at least 2 ads")
    rng = np.random.default_rng([seed, SEED_TAG_NEGATIVES])
    positives = [r for r in records if r.label == 1]
    if positives:
        pos_idx = np.array([vocab.ad_index[r.ad] for r in positives], dtype=np.intp)
        neg = negative_ad_indices(pos_idx, vocab.num_ads, k, rng)
    out = []
    pi = 0
    for r in records:
        out.append(r)
        if r.label == 1:
            for j in range(k):
                out.append(InteractionRecord(r.user, vocab.ads[neg[pi, j]], 0))
            pi += 1
    return out


# ---------------------------------------------------------------------------
# Synthetic hierarchical data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTreeSpec:
    depth: int = 6
    branching: int = 3
    users_per_leaf: int = 20
    click_noise: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.branching < 2:
            raise ConfigError(f"branching must be >= 2, got {self.branching}")
        if self.users_per_leaf < 1:
            raise ConfigError(f"users_per_leaf must be >= 1, got {self.users_per_leaf}")
        if not 0 <= self.click_noise < 0.5:
            raise ConfigError(f"click_noise must be in [0, 0.5), got {self.click_noise}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def tree_node_count(depth: int, branching: int) -> int:
    return (branching ** (depth + 1) - 1) // (branching - 1)


def ad_id(i: int) -> str:
    return f"ad_{i:05d}"


def user_id(i: int) -> str:
    return f"user_{i:05d}"


def build_tree(depth: int, branching: int):
    """Complete tree in level order: root 0, children of i are b*i+1 .. b*i+b.

    Returns (num_nodes, edges as (parent_idx, child_idx), first leaf index).
    """
    n = tree_node_count(depth, branching)
    first_leaf = tree_node_count(depth - 1, branching) if depth >= 1 else 0
    edges = [((i - 1) // branching, i) for i in range(1, n)]
    return n, edges, first_leaf


def _path_to_root(node: int, branching: int) -> list[int]:
    path = [node]
    while node != 0:
        node = (node - 1) // branching
        path.append(node)
    return path[::-1]


def generate_tree_dataset(spec: SyntheticTreeSpec):
    """Synthetic click log over a complete ad tree.

    Each user lives at one leaf and gets explicit records for every ad on the
    root-to-leaf path (clicked with probability 1 - click_noise) and for an
    equal-sized sample of non-path ads (clicked with probability click_noise).

    Returns (records, edges) with edges as (parent_id, child_id) pairs.
    """
    n, idx_edges, first_leaf = build_tree(spec.depth, spec.branching)
    rng = np.random.default_rng([spec.seed, 0])
    path_len = spec.depth + 1
    num_leaves = n - first_leaf
    records = []
    all_ads = np.arange(n)
    for leaf_pos in range(num_leaves):
        leaf = first_leaf + leaf_pos
        path = _path_to_root(leaf, spec.branching)
        off_path = np.setdiff1d(all_ads, path, assume_unique=True)
        for j in range(spec.users_per_leaf):
            uid = user_id(leaf_pos * spec.users_per_leaf + j)
            path_labels = rng.random(path_len) >= spec.click_noise
            for node, lab in zip(path, path_labels):
                records.append(InteractionRecord(uid, ad_id(node), int(lab)))
            picks = rng.choice(off_path.shape[0], size=path_len, replace=False)
            noise_labels = rng.random(path_len) < spec.click_noise
            for p, lab in zip(off_path[picks], noise_labels):
                records.append(InteractionRecord(uid, ad_id(int(p)), int(lab)))
    edges = [(ad_id(p), ad_id(ch)) for p, ch in idx_edges]
    return records, edges


def write_edges(edges, path):
    with open(path, "w", encoding="utf-8") as fh:
        for parent, child in edges:
            fh.write(f"{parent},{child}\n")


def split_records(records, test_fraction: float = 0.1, seed: int = 42):
    """Train/test split: by last timestamps when all records carry one,
    otherwise a seeded random split at the record level."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(records)
    if n < 2:
        return list(records), []
    n_test = min(n - 1, max(1, round(n * test_fraction)))
    if all(r.timestamp is not None for r in records):
        order = sorted(range(n), key=lambda i: (records[i].timestamp, i))
    else:
        rng = np.random.default_rng([seed, SEED_TAG_SPLIT])
        order = list(rng.permutation(n))
    test_set = set(order[n - n_test :])
    train = [r for i, r in enumerate(records) if i not in test_set]
    test = [r for i, r in enumerate(records) if i in test_set]
    return train, test
