import numpy as np
import pytest

from pathrec.datasets import derive_relations, synthetic_schema
from pathrec.embeddings import EmbedTrainConfig, init_table, rng_for
from pathrec.graph import KnowledgeGraph


@pytest.fixture(scope="session")
def schema():
    return synthetic_schema()


def build_shop_graph(schema, n_users=4, n_items=6, n_brands=2, n_categories=2,
                     interactions=3, seed=0, derive=True):
    """Random purchase graph; every item gets one brand and one category."""
    g = KnowledgeGraph(schema)
    rng = rng_for(seed, "test-graph")
    users = [g.add_entity("user", f"u{i}") for i in range(n_users)]
    items = [g.add_entity("item", f"i{i}") for i in range(n_items)]
    brands = [g.add_entity("brand", f"b{i}") for i in range(n_brands)]
    cats = [g.add_entity("category", f"c{i}") for i in range(n_categories)]
    pb = g.relation_id("produced_by")
    bt = g.relation_id("belong_to")
    pu = g.relation_id("purchase")
    for it in items:
        g.add_triplet(it, pb, brands[int(rng.integers(n_brands))])
        g.add_triplet(it, bt, cats[int(rng.integers(n_categories))])
    for u in users:
        k = min(n_items, interactions)
        for it in rng.choice(n_items, size=k, replace=False):
            g.add_triplet(u, pu, items[int(it)])
    if derive:
        derive_relations(g)
    return g.freeze()


@pytest.fixture
def make_graph(schema):
    def build(**kwargs):
        return build_shop_graph(schema, **kwargs)
    return build


@pytest.fixture
def tiny_graph(schema):
    """Fixed 8-entity graph for exact assertions.

    u0 buys i0 and i1 (both brand b0), u1 buys i2 (brand b1); every item
    sits in category c0. Derived: u0 like b0, u1 like b1, both
    interested_in c0.
    """
    g = KnowledgeGraph(schema)
    u0 = g.add_entity("user", "u0")
    u1 = g.add_entity("user", "u1")
    i0 = g.add_entity("item", "i0")
    i1 = g.add_entity("item", "i1")
    i2 = g.add_entity("item", "i2")
    b0 = g.add_entity("brand", "b0")
    b1 = g.add_entity("brand", "b1")
    c0 = g.add_entity("category", "c0")
    pb = g.relation_id("produced_by")
    bt = g.relation_id("belong_to")
    pu = g.relation_id("purchase")
    for i, b in ((i0, b0), (i1, b0), (i2, b1)):
        g.add_triplet(i, pb, b)
    for i in (i0, i1, i2):
        g.add_triplet(i, bt, c0)
    g.add_triplet(u0, pu, i0)
    g.add_triplet(u0, pu, i1)
    g.add_triplet(u1, pu, i2)
    derive_relations(g)
    return g.freeze()


@pytest.fixture
def small_table(tiny_graph):
    return init_table(tiny_graph, EmbedTrainConfig(dim=8, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
