"""Offline top-K ad retrieval from a checkpoint.

Exact exhaustive scoring: every ad in the catalog is scored for the user
and sorted by predicted click probability, ties broken by ascending ad
index. The checkpoint is treated as immutable, so any number of queries
may run concurrently.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UnknownEntityError
from .model import clip_probs, forward_batch
from .trainer import Checkpoint


@dataclass(frozen=True)
class RankedAds:
    user: str
    k: int
    ad_ids: tuple
    scores: tuple

    def __post_init__(self):
        if len(self.ad_ids) != len(self.scores):
            raise ConfigError("ad_ids and scores must align")


def score_all_ads(ckpt: Checkpoint, user_index: int) -> np.ndarray:
    """Click probability of every ad for one user, in ad-index order."""
    n = ckpt.state.num_ads
    user_idx = np.full(n, user_index, dtype=np.intp)
    ad_idx = np.arange(n, dtype=np.intp)
    return clip_probs(forward_batch(ckpt.state, user_idx, ad_idx).probs)


def topk(ckpt: Checkpoint, user: str, k: int) -> RankedAds:
    """The k highest-scoring ads for a user, exact and deterministic."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if user not in ckpt.vocab.user_index:
        raise UnknownEntityError(f"unknown user {user!r}")
    scores = score_all_ads(ckpt, ckpt.vocab.user_index[user])
    n = scores.shape[0]
    # primary key: descending score; secondary: ascending ad index
    order = np.lexsort((np.arange(n), -scores))[: min(k, n)]
    return RankedAds(
        user=user,
        k=k,
        ad_ids=tuple(ckpt.vocab.ads[i] for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )


def batch_topk(ckpt: Checkpoint, users, k: int, threads: int = 1) -> list:
    """Per-user topk over a list of users; elementwise identical to topk."""
    users = list(users)
    for pos, user in enumerate(users):
        if user not in ckpt.vocab.user_index:
            raise UnknownEntityError(f"unknown user {user!r} at position {pos}")
    if threads > 1 and len(users) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda u: topk(ckpt, u, k), users))
    return [topk(ckpt, u, k) for u in users]


def format_ranking(ranked: RankedAds) -> list:
    """CLI lines: ``user<TAB>rank<TAB>ad<TAB>score`` with 6-decimal scores."""
    return [
        f"{ranked.user}\t{rank}\t{ad}\t{score:.6f}"
        for rank, (ad, score) in enumerate(zip(ranked.ad_ids, ranked.scores), start=1)
    ]
