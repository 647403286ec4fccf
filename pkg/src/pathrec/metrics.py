"""Ranking and cold-start metrics.

All functions work on hashable item keys (the pipeline passes names), with
binary relevance. POPB normalizes each user's recommended popularity mass
by the best achievable mass for that user, i.e. the K most popular items
the user has not already interacted with in training; a pure popularity
recommender therefore scores exactly 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import EmptyColdSet
from .graph import KnowledgeGraph


def ndcg_at_k(recommended: Sequence[Hashable], relevant: set, k: int) -> float:
    """Binary-relevance nDCG@k with 1/log2(rank+1) discounts."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        return 0.0
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, item in enumerate(recommended[:k], start=1)
              if item in relevant)
    ideal = sum(1.0 / math.log2(rank + 1)
                for rank in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal


def hit_at_k(recommended: Sequence[Hashable], relevant: set, k: int) -> float:
    """1.0 if any of the top-k items is relevant, else 0.0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 if any(item in relevant for item in recommended[:k]) else 0.0


def train_popularity(train_graph: KnowledgeGraph) -> dict[str, int]:
    """Item name -> number of training interactions."""
    return {train_graph.entity_name(i): train_graph.interaction_count(i)
            for i in train_graph.items()}


def _best_mass(popularity: Mapping[Hashable, int], k: int,
               exclude: set) -> float:
    pool = sorted((item for item in popularity if item not in exclude),
                  key=lambda it: (-popularity[it], it))
    return float(sum(popularity[it] for it in pool[:k]))


def popb_at_k(recs_per_user: Mapping[Hashable, Sequence[Hashable]],
              popularity: Mapping[Hashable, int], k: int,
              exclude_per_user: Mapping[Hashable, set] | None = None) -> float:
    """Mean per-user popularity mass of the top-k, normalized per user by
    the mass of the k most popular items outside that user's training set.

    Users whose normalizer is zero contribute 0 (their numerator is then
    zero too). Items unseen in training count zero popularity.
    """
    if not recs_per_user:
        return 0.0
    total = 0.0
    for user, recs in recs_per_user.items():
        exclude = exclude_per_user.get(user, set()) if exclude_per_user else set()
        denom = _best_mass(popularity, k, exclude)
        num = float(sum(popularity.get(item, 0) for item in recs[:k]))
        total += num / denom if denom > 0 else 0.0
    return total / len(recs_per_user)


def cold_item_coverage(recs_per_user: Mapping[Hashable, Sequence[Hashable]],
                       cold_items: set, k: int) -> float:
    """Fraction of cold items that appear in at least one top-k list."""
    if not cold_items:
        raise EmptyColdSet("coverage is undefined for an empty cold-item set")
    seen = set()
    for recs in recs_per_user.values():
        seen.update(item for item in recs[:k] if item in cold_items)
    return len(seen) / len(cold_items)


def cold_item_proportion(recs_per_user: Mapping[Hashable, Sequence[Hashable]],
                         cold_items: set, k: int) -> float:
    """Mean per-user fraction of the top-k occupied by cold items.

    The divisor is k even when a list is shorter, so sparse lists are not
    rewarded."""
    if not cold_items:
        raise EmptyColdSet("proportion is undefined for an empty cold-item set")
    if not recs_per_user:
        return 0.0
    total = sum(sum(1 for item in recs[:k] if item in cold_items) / k
                for recs in recs_per_user.values())
    return total / len(recs_per_user)


@dataclass(frozen=True)
class PopBaseline:
    """Pure popularity recommender with per-user filtering of training items."""

    ordered_items: tuple[Hashable, ...]
    train_items: Mapping[Hashable, set]
    k: int

    def recommend(self, user: Hashable) -> list[Hashable]:
        seen = self.train_items.get(user, set())
        out = []
        for item in self.ordered_items:
            if item not in seen:
                out.append(item)
                if len(out) == self.k:
                    break
        return out


def pop_baseline(train_graph: KnowledgeGraph, k: int) -> PopBaseline:
    popularity = train_popularity(train_graph)
    ordered = tuple(sorted(popularity, key=lambda it: (-popularity[it], it)))
    train_items = {train_graph.entity_name(u):
                   {train_graph.entity_name(i) for i in train_graph.user_items(u)}
                   for u in train_graph.users()}
    return PopBaseline(ordered_items=ordered, train_items=train_items, k=k)


def pattern_report(signature_labels: Iterable[str]) -> list[tuple[str, float]]:
    """Percentage histogram over chosen-path signatures, descending.

    Percentages sum to 100 (within float error) whenever any path exists.
    """
    counts: dict[str, int] = {}
    total = 0
    for label in signature_labels:
        counts[label] = counts.get(label, 0) + 1
        total += 1
    if total == 0:
        return []
    return sorted(((label, 100.0 * c / total) for label, c in counts.items()),
                  key=lambda kv: (-kv[1], kv[0]))
