"""Beam search over the policy and ranking of terminal items.

The beam expands breadth-wise with a per-hop branching width: at hop t
each surviving partial path keeps its ``widths[t]`` most probable
continuations, so widths that cover the whole slate make the search
exhaustive. Complete paths are ranked by cumulative log probability and
deduplicated per terminal item, keeping the best path as the explanation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, score_tails
from .errors import UnknownUser
from .graph import FORWARD, KnowledgeGraph
from .mdp import PathState, encode_state, step, valid_actions
from .policy import PolicyModel


@dataclass(frozen=True)
class ScoredPath:
    state: PathState
    logprob: float

    @property
    def terminal(self) -> int:
        return self.state.terminal


def beam_search(user: int, policy: PolicyModel, graph: KnowledgeGraph,
                table: EmbeddingTable, widths: Sequence[int],
                max_actions: int | None = None) -> list[ScoredPath]:
    """All complete len(widths)-hop paths explored from ``user``.

    Per-hop, each partial path keeps its widths[t] most probable actions
    (ties broken by target entity id, then relation, then direction).
    Deterministic for a fixed policy.
    """
    if not graph.is_user(user):
        raise UnknownUser(f"entity {user} is not of type {graph.schema.user_type}")
    if any(w < 1 for w in widths):
        raise ValueError("beam widths must be >= 1")
    budget = len(widths)
    cap = policy.config.max_actions if max_actions is None else max_actions
    all_ids = np.arange(graph.entity_count, dtype=np.intp)
    user_scores = score_tails(table, user, graph.interaction_relation, all_ids)
    frontier = [ScoredPath(PathState.start(user, budget), 0.0)]
    for width in widths:
        slates = [valid_actions(p.state, graph, max_actions=cap,
                                user_scores=user_scores) for p in frontier]
        sizes = np.asarray([len(s) for s in slates], dtype=np.intp)
        X = np.stack([encode_state(p.state, table) for p in frontier])
        probs, _, _ = policy.forward(X, sizes)
        grown: list[ScoredPath] = []
        for path, slate, p in zip(frontier, slates, probs):
            order = sorted(range(len(slate)),
                           key=lambda i: (-p[i], slate[i].target, slate[i].relation,
                                          slate[i].direction))
            for i in order[:width]:
                grown.append(ScoredPath(step(path.state, slate[i], graph),
                                        path.logprob + float(np.log(p[i]))))
        frontier = grown
    return frontier


@dataclass(frozen=True)
class Recommendation:
    item: int
    rank: int
    logprob: float
    path: ScoredPath


@dataclass(frozen=True)
class RecommendationList:
    user: int
    entries: tuple[Recommendation, ...]

    def items(self) -> list[int]:
        return [e.item for e in self.entries]


def rank_recommendations(paths: Sequence[ScoredPath], graph: KnowledgeGraph,
                         table: EmbeddingTable, user: int, k: int) -> RecommendationList:
    """Top-k items from complete paths, one best path per item.

    Paths not ending at an item and items the user already interacted with
    in training are dropped. Items are ordered by path log probability,
    ties by f(u, i | interaction), then item id.
    """
    if any(p.state.user != user for p in paths):
        raise UnknownUser("all paths must start at the requested user")
    seen = graph.user_items(user)
    best: dict[int, ScoredPath] = {}
    for p in sorted(paths, key=lambda p: (-p.logprob, p.state.entities, p.state.relations)):
        t = p.terminal
        if not graph.is_item(t) or t in seen:
            continue
        if t not in best:  # first hit is the best path for this item
            best[t] = p
    if not best:
        return RecommendationList(user=user, entries=())
    items = np.asarray(sorted(best), dtype=np.intp)
    fscores = score_tails(table, user, graph.interaction_relation, items)
    f_by_item = dict(zip(items.tolist(), fscores.tolist()))
    ranked = sorted(best, key=lambda i: (-best[i].logprob, -f_by_item[i], i))[:k]
    entries = tuple(Recommendation(item=i, rank=r + 1, logprob=best[i].logprob,
                                   path=best[i]) for r, i in enumerate(ranked))
    return RecommendationList(user=user, entries=entries)


@dataclass(frozen=True)
class ExplanationHop:
    head: str
    relation: str
    direction: int
    tail: str


@dataclass(frozen=True)
class Explanation:
    """Readable path with self-loops elided; keeps raw ids for a lossless
    round trip back to the graph."""

    user_key: str
    hops: tuple[ExplanationHop, ...]
    entity_ids: tuple[int, ...]
    relation_ids: tuple[tuple[int, int], ...]
    no_recommendation: bool

    def to_text(self) -> str:
        if self.no_recommendation:
            return f"{self.user_key}: no recommendation (path never left the user)"
        parts = []
        for hop in self.hops:
            if hop.direction == FORWARD:
                parts.append(f"{hop.head} -[{hop.relation}]-> {hop.tail}")
            else:
                parts.append(f"{hop.head} <-[{hop.relation}]- {hop.tail}")
        return "; ".join(parts)


def explain(path: ScoredPath | PathState, graph: KnowledgeGraph) -> Explanation:
    """Render a path as readable hops; self-loop steps are skipped."""
    state = path.state if isinstance(path, ScoredPath) else path
    hops = []
    from .mdp import SELF_LOOP

    for (rel, d), head, tail in zip(state.relations, state.entities, state.entities[1:]):
        if rel == SELF_LOOP:
            continue
        hops.append(ExplanationHop(head=graph.entity_key(head),
                                   relation=graph.relation_name(rel),
                                   direction=d, tail=graph.entity_key(tail)))
    return Explanation(
        user_key=graph.entity_key(state.user),
        hops=tuple(hops),
        entity_ids=state.entities,
        relation_ids=state.relations,
        no_recommendation=not hops,
    )
