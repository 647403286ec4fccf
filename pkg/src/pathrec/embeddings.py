"""Translational embeddings over a knowledge graph.

A triplet (h, r, t) is scored f(h, t | r) = <e_h + e_r, e_t> + b_t and the
conditional probability of the tail given (head, relation) is the softmax
of f over a candidate set. Training maximizes the log conditional
probability of stored triplets, approximated by sampled softmax over
corrupted tails of the same entity type (or computed exactly over all
type-compatible tails in ``full_softmax`` mode).

Everything is float64 numpy with a fixed summation order, so training is
bit-reproducible given the seed, the config, and the graph.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyCandidates, EmptyGraph, InvalidSpec, MissingEmbedding
from .graph import KnowledgeGraph
from .optim import Adam


def rng_for(seed: int, tag: str) -> np.random.Generator:
    """Independent deterministic stream per (seed, stage tag)."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]))


@dataclass(frozen=True)
class EmbedTrainConfig:
    dim: int = 100
    epochs: int = 30
    learning_rate: float = 0.001
    batch_size: int = 512
    negatives: int = 5
    seed: int = 0
    full_softmax: bool = False

    def validate(self):
        if self.dim < 1:
            raise InvalidSpec("embedding dim must be >= 1")
        if self.epochs < 0:
            raise InvalidSpec("epochs must be >= 0")
        if self.batch_size < 1 or self.negatives < 1:
            raise InvalidSpec("batch_size and negatives must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidSpec("learning_rate must be positive")


class EmbeddingTable:
    """Dense per-id vectors for entities and relations plus tail biases.

    Row i of ``entity_vecs`` belongs to entity id i of the graph the table
    was trained on. ``self_loop_vec`` is the null-relation vector used when
    encoding self-loop steps; no stored triplet involves it, so training
    leaves it at its initialization.
    """

    def __init__(self, entity_vecs: np.ndarray, entity_bias: np.ndarray,
                 relation_vecs: np.ndarray, self_loop_vec: np.ndarray, seed: int = 0):
        self.entity_vecs = entity_vecs
        self.entity_bias = entity_bias
        self.relation_vecs = relation_vecs
        self.self_loop_vec = self_loop_vec
        self.seed = seed

    @property
    def dim(self) -> int:
        return self.entity_vecs.shape[1]

    @property
    def entity_count(self) -> int:
        return self.entity_vecs.shape[0]

    def entity_vec(self, e: int) -> np.ndarray:
        if not 0 <= e < self.entity_count:
            raise MissingEmbedding(f"entity id {e} has no embedding row")
        return self.entity_vecs[e]

    def relation_vec(self, r: int) -> np.ndarray:
        if not 0 <= r < self.relation_vecs.shape[0]:
            raise MissingEmbedding(f"relation id {r} has no embedding row")
        return self.relation_vecs[r]

    def bias(self, e: int) -> float:
        if not 0 <= e < self.entity_count:
            raise MissingEmbedding(f"entity id {e} has no bias")
        return float(self.entity_bias[e])

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entity_vecs.copy(), self.entity_bias.copy(),
                              self.relation_vecs.copy(), self.self_loop_vec.copy(), self.seed)

    def append_entity(self, e: int, vec: np.ndarray, bias: float):
        """Extend the table with a row for a newly integrated entity.

        Ids must stay aligned with graph ids, so rows are appended in id
        order; existing rows are never touched.
        """
        if e != self.entity_count:
            raise MissingEmbedding(
                f"entity rows must be appended in id order (got {e}, expected {self.entity_count})"
            )
        if vec.shape != (self.dim,):
            raise InvalidSpec(f"expected a {self.dim}-dim vector, got {vec.shape}")
        self.entity_vecs = np.vstack([self.entity_vecs, vec[None, :]])
        self.entity_bias = np.append(self.entity_bias, float(bias))


def init_table(graph: KnowledgeGraph, config: EmbedTrainConfig) -> EmbeddingTable:
    """Uniform(-0.5/d, 0.5/d) vectors, zero biases; draw order is fixed."""
    config.validate()
    rng = rng_for(config.seed, "embed-init")
    d = config.dim
    half = 0.5 / d
    ent = rng.uniform(-half, half, size=(graph.entity_count, d))
    rel = rng.uniform(-half, half, size=(graph.relation_count, d))
    loop = rng.uniform(-half, half, size=d)
    bias = np.zeros(graph.entity_count)
    return EmbeddingTable(ent, bias, rel, loop, seed=config.seed)


def score_triplet(table: EmbeddingTable, head: int, relation: int, tail: int) -> float:
    """f(h, t | r) = <e_h + e_r, e_t> + b_t."""
    return float(np.dot(table.entity_vec(head) + table.relation_vec(relation),
                        table.entity_vec(tail)) + table.bias(tail))


def score_tails(table: EmbeddingTable, head: int, relation: int, tails: np.ndarray) -> np.ndarray:
    """Vectorized f(h, . | r) over an array of tail ids."""
    query = table.entity_vec(head) + table.relation_vec(relation)
    return table.entity_vecs[tails] @ query + table.entity_bias[tails]


def conditional_prob(table: EmbeddingTable, head: int, relation: int, tail: int,
                     candidates) -> float:
    """Softmax probability of ``tail`` among ``candidates`` under f(h, . | r)."""
    cands = sorted(set(candidates))
    if not cands:
        raise EmptyCandidates("candidate set is empty")
    if tail not in set(cands):
        raise ValueError("tail must be a member of the candidate set")
    scores = score_tails(table, head, relation, np.asarray(cands, dtype=np.intp))
    scores = scores - scores.max()
    exp = np.exp(scores)
    return float(exp[cands.index(tail)] / exp.sum())


def _type_pools(graph: KnowledgeGraph) -> dict[str, np.ndarray]:
    return {t: np.asarray(graph.entities_of_type(t), dtype=np.intp)
            for t in graph.schema.entity_types}


def _zero_grads(table: EmbeddingTable) -> dict[str, np.ndarray]:
    return {
        "entity_vecs": np.zeros_like(table.entity_vecs),
        "entity_bias": np.zeros_like(table.entity_bias),
        "relation_vecs": np.zeros_like(table.relation_vecs),
    }


def _accumulate_batch(table, grads, heads, rels, cand_ids, cand_mask, true_col, scale):
    """Softmax cross-entropy gradient for one batch of candidate slates.

    cand_ids: (B, C) tail ids per row; cand_mask: True where the slot is a
    real candidate; true_col: column index of the true tail per row.
    """
    query = table.entity_vecs[heads] + table.relation_vecs[rels]      # (B, d)
    cand_vecs = table.entity_vecs[cand_ids]                            # (B, C, d)
    scores = np.einsum("bcd,bd->bc", cand_vecs, query) + table.entity_bias[cand_ids]
    scores = np.where(cand_mask, scores, -np.inf)
    scores -= scores.max(axis=1, keepdims=True)
    exp = np.exp(scores)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = -np.log(probs[np.arange(len(heads)), true_col]).sum() * scale

    dscores = probs * scale
    dscores[np.arange(len(heads)), true_col] -= scale
    dquery = np.einsum("bc,bcd->bd", dscores, cand_vecs)
    np.add.at(grads["entity_vecs"], heads, dquery)
    np.add.at(grads["relation_vecs"], rels, dquery)
    dcand = dscores[:, :, None] * query[:, None, :]
    np.add.at(grads["entity_vecs"], cand_ids.ravel(), dcand.reshape(-1, table.dim))
    np.add.at(grads["entity_bias"], cand_ids.ravel(), dscores.ravel())
    return loss


def sampled_softmax_grads(table: EmbeddingTable, graph: KnowledgeGraph,
                          triplets: np.ndarray, pools: dict[str, np.ndarray],
                          negatives: int, rng: np.random.Generator):
    """Mean negative log sampled-softmax probability and its gradients.

    Negatives are drawn uniformly from entities of the tail type; draws
    equal to the true tail are masked out of the slate.
    """
    grads = _zero_grads(table)
    B = len(triplets)
    heads, rels, tails = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    neg = np.empty((B, negatives), dtype=np.intp)
    for r_id in np.unique(rels):
        rows = np.nonzero(rels == r_id)[0]
        pool = pools[graph.schema.relations[r_id].tail_type]
        neg[rows] = pool[rng.integers(0, len(pool), size=(len(rows), negatives))]
    cand_ids = np.concatenate([tails[:, None], neg], axis=1)
    mask = np.ones_like(cand_ids, dtype=bool)
    mask[:, 1:] = neg != tails[:, None]
    loss = _accumulate_batch(table, grads, heads, rels, cand_ids, mask,
                             np.zeros(B, dtype=np.intp), 1.0 / B)
    return loss, grads


def full_softmax_grads(table: EmbeddingTable, graph: KnowledgeGraph,
                       triplets: np.ndarray, pools: dict[str, np.ndarray]):
    """Exact softmax over all type-compatible tails; mean loss and gradients."""
    grads = _zero_grads(table)
    B = len(triplets)
    loss = 0.0
    rels = triplets[:, 1]
    for r_id in np.unique(rels):
        rows = np.nonzero(rels == r_id)[0]
        pool = pools[graph.schema.relations[r_id].tail_type]
        pos = {e: i for i, e in enumerate(pool.tolist())}
        sub = triplets[rows]
        cand_ids = np.broadcast_to(pool, (len(rows), len(pool))).copy()
        true_col = np.asarray([pos[t] for t in sub[:, 2].tolist()], dtype=np.intp)
        mask = np.ones_like(cand_ids, dtype=bool)
        loss += _accumulate_batch(table, grads, sub[:, 0], sub[:, 1],
                                  cand_ids, mask, true_col, 1.0 / B)
    return loss, grads


def train_embeddings(graph: KnowledgeGraph, config: EmbedTrainConfig) -> EmbeddingTable:
    """Train a table on all stored triplets of ``graph``.

    With ``epochs=0`` the initialization is returned unchanged. The graph
    is read-only during training and may be shared.
    """
    config.validate()
    if graph.triplet_count == 0:
        raise EmptyGraph("cannot train embeddings on a graph with no triplets")
    if config.full_softmax and graph.entity_count > 1000:
        raise InvalidSpec("full_softmax mode is limited to graphs with <= 1000 entities")
    table = init_table(graph, config)
    triplets = np.asarray(list(graph.triplets()), dtype=np.intp)
    pools = _type_pools(graph)
    params = [table.entity_vecs, table.relation_vecs, table.entity_bias]
    opt = Adam(params, lr=config.learning_rate)
    rng = rng_for(config.seed, "embed-train")
    for _ in range(config.epochs):
        order = rng.permutation(len(triplets))
        for start in range(0, len(order), config.batch_size):
            batch = triplets[order[start:start + config.batch_size]]
            if config.full_softmax:
                _, grads = full_softmax_grads(table, graph, batch, pools)
            else:
                _, grads = sampled_softmax_grads(table, graph, batch, pools,
                                                 config.negatives, rng)
            opt.step([grads["entity_vecs"], grads["relation_vecs"], grads["entity_bias"]])
    return table


def save_table(table: EmbeddingTable, graph: KnowledgeGraph, path: str,
               config_hash: str = ""):
    """Snapshot keyed by symbol names; round-trips bit-exactly."""
    np.savez(
        path,
        entity_keys=np.asarray([graph.entity_key(e) for e in range(graph.entity_count)]),
        relation_keys=np.asarray([r.name for r in graph.schema.relations]),
        entity_vecs=table.entity_vecs,
        entity_bias=table.entity_bias,
        relation_vecs=table.relation_vecs,
        self_loop_vec=table.self_loop_vec,
        seed=np.asarray(table.seed),
        config_hash=np.asarray(config_hash),
    )


def load_table(path: str, graph: KnowledgeGraph | None = None) -> EmbeddingTable:
    """Load a snapshot; when a graph is given, keys are checked against it."""
    with np.load(path, allow_pickle=False) as data:
        table = EmbeddingTable(
            data["entity_vecs"].copy(), data["entity_bias"].copy(),
            data["relation_vecs"].copy(), data["self_loop_vec"].copy(),
            seed=int(data["seed"]),
        )
        if graph is not None:
            keys = data["entity_keys"].tolist()
            want = [graph.entity_key(e) for e in range(graph.entity_count)]
            if keys[:len(want)] != want or len(keys) < len(want):
                raise MissingEmbedding(f"snapshot {path} does not match the graph's entities")
            rel_keys = data["relation_keys"].tolist()
            if rel_keys != [r.name for r in graph.schema.relations]:
                raise MissingEmbedding(f"snapshot {path} does not match the graph's relations")
    return table
