"""Dataset loading, the evaluation split, and a planted-preference generator.

The split carves out a fraction of users and items as strict cold start:
no training triplet touches them. Warm users keep a per-user chronological
prefix split of their interactions; cold users are hidden entirely and
half go to validation, half to test. Cold users get capped relation
profiles derived from their hidden interactions; cold items keep their
native attribute profiles uncapped. Derived relations are recomputed from
training interactions only, so the training graph leaks nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coldstart import ColdDeclaration, ColdProfile, read_profiles, write_profiles
from .embeddings import rng_for
from .errors import EmptyUser, InvalidSpec, ParseError
from .graph import FORWARD, KGSchema, KnowledgeGraph, read_triplet_file

log = logging.getLogger(__name__)


def load_dataset(triplet_path: str, schema_path: str | KGSchema) -> KnowledgeGraph:
    """Build a frozen graph from a triplet file, deriving declared relations.

    Derived relations must not appear in the file; they are joined from the
    interactions it contains.
    """
    schema = schema_path if isinstance(schema_path, KGSchema) else KGSchema.load(schema_path)
    derived = {r.name for r in schema.relations if r.derived_from is not None}
    graph = KnowledgeGraph(schema)
    for ht, hn, rel, tt, tn in read_triplet_file(triplet_path):
        if rel in derived:
            raise ParseError(
                f"{triplet_path}: derived relation {rel!r} may not appear in a triplet file"
            )
        h = graph.add_entity(ht, hn)
        t = graph.add_entity(tt, tn)
        graph.add_triplet(h, graph.relation_id(rel), t)
    derive_relations(graph)
    return graph.freeze()


def derive_relations(graph: KnowledgeGraph):
    """Materialize derived relations by joining interactions with their via
    relation. Idempotent; the same pair may be joined through many items."""
    interactions = [(u, i) for u, items in sorted(graph.interactions_by_user().items())
                    for i in items]
    for rel_id, spec in enumerate(graph.schema.relations):
        if spec.derived_from is None:
            continue
        via_id = graph.relation_id(spec.derived_from.via)
        for u, i in interactions:
            for _, x, d in graph.neighbors(i, via_id):
                if d == FORWARD and not graph.has_triplet(u, rel_id, x):
                    graph.add_triplet(u, rel_id, x)


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    cold_frac: float = 0.2
    cap_low: int = 1
    cap_high: int = 10
    seed: int = 0

    def validate(self):
        fr = [Fraction(str(f)) for f in (self.train_frac, self.val_frac, self.test_frac)]
        if any(f < 0 for f in fr) or sum(fr) != 1:
            raise InvalidSpec("train/val/test fractions must be >= 0 and sum to 1")
        if not 0 < Fraction(str(self.cold_frac)) < 1:
            raise InvalidSpec("cold_frac must be in (0, 1)")
        if self.cap_low < 1 or self.cap_high < self.cap_low:
            raise InvalidSpec("cap range must satisfy 1 <= low <= high")

    def to_json(self) -> dict:
        return {"train_frac": self.train_frac, "val_frac": self.val_frac,
                "test_frac": self.test_frac, "cold_frac": self.cold_frac,
                "cap_low": self.cap_low, "cap_high": self.cap_high, "seed": self.seed}


def prefix_shares(n: int, config: SplitConfig) -> tuple[int, int, int]:
    """Chronological share sizes: ceil for train, then ceil for val on what
    remains, remainder to test. Exact rational arithmetic, no float drift."""
    tr = min(n, math.ceil(Fraction(str(config.train_frac)) * n))
    va = min(n - tr, math.ceil(Fraction(str(config.val_frac)) * n))
    return tr, va, n - tr - va


@dataclass(frozen=True)
class RelationTargets:
    """Ranked candidate targets of one profile relation: (type, name, source
    entity id, frequency), sorted by descending frequency then entity id."""

    relation: str
    target_type: str
    targets: tuple[tuple[str, int, int], ...]  # (name, source_id, freq)


def cap_cold_relations(name: str, entity_type: str,
                       relation_targets: list[RelationTargets],
                       rng: np.random.Generator | None,
                       cap_low: int = 1, cap_high: int = 10,
                       fixed_k: int | None = None) -> ColdProfile:
    """Cap each relation's targets to its k most frequent (ties by entity id).

    k is drawn uniformly from {cap_low..cap_high} per relation, or pinned
    with ``fixed_k``. Relations with no targets are omitted.
    """
    decls = []
    for rt in relation_targets:
        if not rt.targets:
            continue
        k = fixed_k if fixed_k is not None else int(rng.integers(cap_low, cap_high + 1))
        for tname, _, _ in rt.targets[:k]:
            decls.append(ColdDeclaration(rt.relation, rt.target_type, tname))
    return ColdProfile(name=name, entity_type=entity_type, declarations=tuple(decls))


@dataclass
class DatasetSplit:
    schema: KGSchema
    config: SplitConfig
    train_graph: KnowledgeGraph
    warm_val: dict[str, list[str]]
    warm_test: dict[str, list[str]]
    cold_val: dict[str, list[str]]
    cold_test: dict[str, list[str]]
    cold_items: list[str]
    user_profiles: list[ColdProfile]
    item_profiles: list[ColdProfile]
    cold_user_targets: dict[str, list[RelationTargets]]

    @property
    def profiles(self) -> list[ColdProfile]:
        return self.user_profiles + self.item_profiles

    def manifest(self) -> dict:
        return {
            "config": self.config.to_json(),
            "warm_val": self.warm_val,
            "warm_test": self.warm_test,
            "cold_val": self.cold_val,
            "cold_test": self.cold_test,
            "cold_items": self.cold_items,
            "cold_user_targets": {
                u: [{"relation": rt.relation, "target_type": rt.target_type,
                     "targets": [[n, i, f] for n, i, f in rt.targets]}
                    for rt in rts]
                for u, rts in self.cold_user_targets.items()
            },
        }

    def write(self, out_dir: str, config_hash: str = ""):
        os.makedirs(out_dir, exist_ok=True)
        self.schema.save(os.path.join(out_dir, "schema.json"))
        self.train_graph.write_triplets(os.path.join(out_dir, "train.tsv"))
        write_profiles(self.profiles, os.path.join(out_dir, "profiles.jsonl"))
        manifest = self.manifest()
        manifest["config_hash"] = config_hash
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, out_dir: str) -> "DatasetSplit":
        schema = KGSchema.load(os.path.join(out_dir, "schema.json"))
        train_graph = load_dataset(os.path.join(out_dir, "train.tsv"), schema)
        with open(os.path.join(out_dir, "manifest.json")) as fh:
            m = json.load(fh)
        profiles = read_profiles(os.path.join(out_dir, "profiles.jsonl"))
        user_type = schema.user_type
        targets = {
            u: [RelationTargets(rt["relation"], rt["target_type"],
                                tuple((n, i, f) for n, i, f in rt["targets"]))
                for rt in rts]
            for u, rts in m["cold_user_targets"].items()
        }
        return cls(
            schema=schema, config=SplitConfig(**m["config"]), train_graph=train_graph,
            warm_val=m["warm_val"], warm_test=m["warm_test"],
            cold_val=m["cold_val"], cold_test=m["cold_test"],
            cold_items=m["cold_items"],
            user_profiles=[p for p in profiles if p.entity_type == user_type],
            item_profiles=[p for p in profiles if p.entity_type != user_type],
            cold_user_targets=targets,
        )


def _cold_selection(ids: list[int], frac: Fraction, rng: np.random.Generator) -> list[int]:
    n_cold = int(frac * len(ids))
    order = rng.permutation(len(ids))
    return [ids[i] for i in order[:n_cold]]


def _user_relation_targets(graph: KnowledgeGraph, user: int,
                           hidden: list[int]) -> list[RelationTargets]:
    """Candidate profile targets of a cold user from their hidden history."""
    out = []
    for spec in graph.schema.relations:
        if not spec.cold_integration or spec.head_type != graph.schema.user_type:
            continue
        freq: dict[int, int] = {}
        if spec.derived_from is not None:
            via_id = graph.relation_id(spec.derived_from.via)
            for i in hidden:
                for _, x, d in graph.neighbors(i, via_id):
                    if d == FORWARD:
                        freq[x] = freq.get(x, 0) + 1
        else:
            rel_id = graph.relation_id(spec.name)
            for _, x, d in graph.neighbors(user, rel_id):
                if d == FORWARD:
                    freq[x] = freq.get(x, 0) + 1
        ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
        out.append(RelationTargets(
            relation=spec.name, target_type=spec.tail_type,
            targets=tuple((graph.entity_name(x), x, f) for x, f in ranked)))
    return out


def _item_profile(graph: KnowledgeGraph, item: int) -> ColdProfile:
    """Native attribute declarations of a cold item, uncapped."""
    decls = []
    for spec in graph.schema.relations:
        if not spec.cold_integration or spec.head_type != graph.schema.item_type:
            continue
        rel_id = graph.relation_id(spec.name)
        for _, x, d in graph.neighbors(item, rel_id):
            if d == FORWARD:
                decls.append(ColdDeclaration(spec.name, spec.tail_type,
                                             graph.entity_name(x)))
    return ColdProfile(name=graph.entity_name(item),
                       entity_type=graph.schema.item_type,
                       declarations=tuple(decls))


def split_dataset(graph: KnowledgeGraph, config: SplitConfig) -> DatasetSplit:
    """Carve cold cohorts and chronological shares out of a loaded graph.

    Interactions partition exactly into train / val / test: warm users
    follow the prefix rule with any train-positioned interaction on a cold
    item reassigned to that user's test list; cold users are hidden
    entirely. Deterministic given the seed; a rerun is byte-identical.
    """
    config.validate()
    by_user = graph.interactions_by_user()
    users = graph.users()
    for u in users:
        if not by_user.get(u):
            raise EmptyUser(f"user {graph.entity_key(u)} has no interactions")
    items = graph.items()

    rng = rng_for(config.seed, "split")
    cold_frac = Fraction(str(config.cold_frac))
    cold_users = _cold_selection(users, cold_frac, rng)
    cold_items = _cold_selection(items, cold_frac, rng)
    cold_user_set, cold_item_set = set(cold_users), set(cold_items)
    half = len(cold_users) // 2
    cold_val_users, cold_test_users = cold_users[:half], cold_users[half:]

    warm_val: dict[str, list[str]] = {}
    warm_test: dict[str, list[str]] = {}
    train_pairs: set[tuple[int, int]] = set()
    for u in users:
        if u in cold_user_set:
            continue
        seq = by_user[u]
        n_tr, n_va, _ = prefix_shares(len(seq), config)
        val_list, test_list = [], []
        for idx, i in enumerate(seq):
            if idx < n_tr:
                if i in cold_item_set:
                    test_list.append(i)  # cannot train on a cold item
                else:
                    train_pairs.add((u, i))
            elif idx < n_tr + n_va:
                val_list.append(i)
            else:
                test_list.append(i)
        uname = graph.entity_name(u)
        if val_list:
            warm_val[uname] = [graph.entity_name(i) for i in val_list]
        if test_list:
            warm_test[uname] = [graph.entity_name(i) for i in test_list]

    cold_val = {graph.entity_name(u): [graph.entity_name(i) for i in by_user[u]]
                for u in sorted(cold_val_users)}
    cold_test = {graph.entity_name(u): [graph.entity_name(i) for i in by_user[u]]
                 for u in sorted(cold_test_users)}

    train_graph = KnowledgeGraph(graph.schema)
    interaction = graph.interaction_relation
    for h, r, t in graph.triplets():
        if graph.schema.relations[r].derived_from is not None:
            continue
        if h in cold_user_set or h in cold_item_set or t in cold_user_set or t in cold_item_set:
            continue
        if r == interaction and (h, t) not in train_pairs:
            continue
        nh = train_graph.add_entity(graph.entity_type(h), graph.entity_name(h))
        nt = train_graph.add_entity(graph.entity_type(t), graph.entity_name(t))
        train_graph.add_triplet(nh, r, nt)
    derive_relations(train_graph)
    train_graph.freeze()

    cold_user_targets: dict[str, list[RelationTargets]] = {}
    user_profiles = []
    for u in sorted(cold_users, key=graph.entity_name):
        targets = _user_relation_targets(graph, u, by_user[u])
        uname = graph.entity_name(u)
        cold_user_targets[uname] = targets
        user_profiles.append(cap_cold_relations(
            uname, graph.schema.user_type, targets, rng,
            config.cap_low, config.cap_high))
    item_profiles = [_item_profile(graph, i)
                     for i in sorted(cold_items, key=graph.entity_name)]

    return DatasetSplit(
        schema=graph.schema, config=config, train_graph=train_graph,
        warm_val=warm_val, warm_test=warm_test,
        cold_val=cold_val, cold_test=cold_test,
        cold_items=sorted(graph.entity_name(i) for i in cold_items),
        user_profiles=user_profiles, item_profiles=item_profiles,
        cold_user_targets=cold_user_targets,
    )


# -- synthetic generator -------------------------------------------------------

SYNTHETIC_TYPES = ("user", "item", "brand", "category")


def synthetic_schema() -> KGSchema:
    return KGSchema.from_json({
        "entity_types": list(SYNTHETIC_TYPES),
        "relations": [
            {"name": "purchase", "head": "user", "tail": "item", "interaction": True},
            {"name": "produced_by", "head": "item", "tail": "brand", "cold_integration": True},
            {"name": "belong_to", "head": "item", "tail": "category", "cold_integration": True},
            {"name": "like", "head": "user", "tail": "brand", "cold_integration": True,
             "derived_from": {"interaction": "purchase", "via": "produced_by"}},
            {"name": "interested_in", "head": "user", "tail": "category", "cold_integration": True,
             "derived_from": {"interaction": "purchase", "via": "belong_to"}},
        ],
        "path_patterns": [
            ["user", "interested_in", "category", "~belong_to", "item"],
            ["user", "like", "brand", "~produced_by", "item"],
            ["user", "purchase", "item", "belong_to", "category", "~belong_to", "item"],
            ["user", "purchase", "item", "produced_by", "brand", "~produced_by", "item"],
            ["user", "purchase", "item", "~purchase", "user", "purchase", "item"],
        ],
    })


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-preference world: each user prefers one (brand, category)
    cell and purchases from it with probability ``p_pref``, else uniformly."""

    users: int = 500
    items: int = 300
    brands: int = 10
    categories: int = 8
    interactions_per_user: int = 10
    p_pref: float = 0.9
    seed: int = 0

    def validate(self):
        if min(self.users, self.items, self.brands, self.categories) < 1:
            raise InvalidSpec("entity counts must be >= 1")
        if not 1 <= self.interactions_per_user <= self.items:
            raise InvalidSpec("interactions_per_user must be in [1, items]")
        if not 0.0 <= self.p_pref <= 1.0:
            raise InvalidSpec("p_pref must be in [0, 1]")

    def to_json(self) -> dict:
        return {"users": self.users, "items": self.items, "brands": self.brands,
                "categories": self.categories,
                "interactions_per_user": self.interactions_per_user,
                "p_pref": self.p_pref, "seed": self.seed}


def generate_synthetic(spec: SyntheticSpec, out_dir: str) -> tuple[str, str]:
    """Write triplets.tsv, schema.json and a prefs.json ground-truth sidecar.

    Purchases are sampled without replacement per user (mixture draws are
    retried, capped at 50 per requested interaction), so each (user, item)
    pair appears at most once and file order is the chronological order.
    User preferences are drawn over the non-empty (brand, category) cells
    realized by the item assignment.
    """
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = rng_for(spec.seed, "synth")
    u_w = max(4, len(str(spec.users)))
    i_w = max(4, len(str(spec.items)))
    users = [f"u{i:0{u_w}d}" for i in range(spec.users)]
    items = [f"i{i:0{i_w}d}" for i in range(spec.items)]
    brands = [f"b{i:02d}" for i in range(spec.brands)]
    cats = [f"c{i:02d}" for i in range(spec.categories)]

    item_brand = rng.integers(0, spec.brands, size=spec.items)
    item_cat = rng.integers(0, spec.categories, size=spec.items)
    cells: dict[tuple[int, int], list[int]] = {}
    for i in range(spec.items):
        cells.setdefault((int(item_brand[i]), int(item_cat[i])), []).append(i)
    cell_keys = sorted(cells)
    pref_idx = rng.integers(0, len(cell_keys), size=spec.users)
    prefs = {users[u]: [brands[cell_keys[pref_idx[u]][0]], cats[cell_keys[pref_idx[u]][1]]]
             for u in range(spec.users)}

    triplet_path = os.path.join(out_dir, "triplets.tsv")
    schema_path = os.path.join(out_dir, "schema.json")
    with open(triplet_path, "w") as fh:
        for i in range(spec.items):
            fh.write(f"item:{items[i]}\tproduced_by\tbrand:{brands[item_brand[i]]}\n")
            fh.write(f"item:{items[i]}\tbelong_to\tcategory:{cats[item_cat[i]]}\n")
        for u in range(spec.users):
            cell = cells[cell_keys[pref_idx[u]]]
            chosen: list[int] = []
            held = set()
            budget = 50 * spec.interactions_per_user
            while len(chosen) < spec.interactions_per_user and budget > 0:
                budget -= 1
                if rng.random() < spec.p_pref:
                    i = cell[int(rng.integers(0, len(cell)))]
                else:
                    i = int(rng.integers(0, spec.items))
                if i not in held:
                    held.add(i)
                    chosen.append(i)
            for i in chosen:
                fh.write(f"user:{users[u]}\tpurchase\titem:{items[i]}\n")
    synthetic_schema().save(schema_path)
    with open(os.path.join(out_dir, "prefs.json"), "w") as fh:
        json.dump({"spec": spec.to_json(), "prefs": prefs}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return triplet_path, schema_path
