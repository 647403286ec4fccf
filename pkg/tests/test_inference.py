import numpy as np
import pytest

from pathrec.embeddings import (EmbedTrainConfig, init_table, score_tails)
from pathrec.errors import UnknownUser
from pathrec.graph import FORWARD, INVERSE, KnowledgeGraph
from pathrec.inference import (Explanation, Recommendation, ScoredPath,
                               beam_search, explain, rank_recommendations)
from pathrec.mdp import (SELF_LOOP, Action, PathState, encode_state, step,
                         valid_actions)
from pathrec.policy import AgentConfig, PolicyModel, state_dim_for


def fresh_policy(table, hop_budget, max_actions=50, seed=7):
    cfg = AgentConfig(hop_budget=hop_budget, max_actions=max_actions,
                      hidden=(16, 8), seed=seed)
    return PolicyModel(state_dim_for(table, hop_budget), cfg)


def enumerate_paths(user, policy, graph, table, budget, cap):
    """Brute-force DFS over every legal action sequence with per-prefix
    probabilities composed through independent forward calls."""
    all_ids = np.arange(graph.entity_count, dtype=np.intp)
    scores = score_tails(table, user, graph.interaction_relation, all_ids)
    out = {}

    def walk(state, logprob):
        if state.is_complete:
            out[(state.entities, state.relations)] = logprob
            return
        slate = valid_actions(state, graph, max_actions=cap, user_scores=scores)
        X = encode_state(state, table)[None, :]
        probs, _, _ = policy.forward(X, np.asarray([len(slate)]))
        for i, action in enumerate(slate):
            walk(step(state, action, graph), logprob + float(np.log(probs[0, i])))

    walk(PathState.start(user, budget), 0.0)
    return out


class TestBeamSearch:
    def test_rejects_non_user_and_bad_widths(self, tiny_graph, small_table):
        policy = fresh_policy(small_table, 2)
        item = tiny_graph.entity_id("item", "i0")
        with pytest.raises(UnknownUser):
            beam_search(item, policy, tiny_graph, small_table, [2, 2])
        user = tiny_graph.entity_id("user", "u0")
        with pytest.raises(ValueError):
            beam_search(user, policy, tiny_graph, small_table, [2, 0])

    def test_wide_beam_is_exhaustive(self, tiny_graph, small_table):
        policy = fresh_policy(small_table, 2)
        u0 = tiny_graph.entity_id("user", "u0")
        found = beam_search(u0, policy, tiny_graph, small_table, [50, 50])
        want = enumerate_paths(u0, policy, tiny_graph, small_table, 2, cap=50)
        got = {(p.state.entities, p.state.relations): p.logprob for p in found}
        assert got.keys() == want.keys()
        for key, lp in want.items():
            assert got[key] == pytest.approx(lp, rel=1e-12)

    def test_wide_beam_exhaustive_three_hops(self, make_graph):
        g = make_graph(n_users=5, n_items=8, n_brands=2, n_categories=2,
                       interactions=3, seed=6)
        table = init_table(g, EmbedTrainConfig(dim=6, seed=1))
        policy = fresh_policy(table, 3, max_actions=60, seed=2)
        user = g.entity_id("user", "u1")
        found = beam_search(user, policy, g, table, [60, 60, 60])
        want = enumerate_paths(user, policy, g, table, 3, cap=60)
        got = {(p.state.entities, p.state.relations): p.logprob for p in found}
        assert got.keys() == want.keys()
        for key, lp in want.items():
            assert got[key] == pytest.approx(lp, rel=1e-12)

    def test_greedy_beam_follows_argmax(self, tiny_graph, small_table):
        policy = fresh_policy(small_table, 3)
        u0 = tiny_graph.entity_id("user", "u0")
        found = beam_search(u0, policy, tiny_graph, small_table, [1, 1, 1])
        assert len(found) == 1
        all_ids = np.arange(tiny_graph.entity_count, dtype=np.intp)
        scores = score_tails(small_table, u0, tiny_graph.interaction_relation,
                             all_ids)
        state = PathState.start(u0, 3)
        expect_lp = 0.0
        for _ in range(3):
            slate = valid_actions(state, tiny_graph, max_actions=50,
                                  user_scores=scores)
            X = encode_state(state, small_table)[None, :]
            probs, _, _ = policy.forward(X, np.asarray([len(slate)]))
            best = min(range(len(slate)),
                       key=lambda i: (-probs[0, i], slate[i].target,
                                      slate[i].relation, slate[i].direction))
            expect_lp += float(np.log(probs[0, best]))
            state = step(state, slate[best], tiny_graph)
        assert found[0].state.entities == state.entities
        assert found[0].state.relations == state.relations
        assert found[0].logprob == pytest.approx(expect_lp, rel=1e-12)

    def test_frontier_sizes_multiply(self, tiny_graph, small_table):
        policy = fresh_policy(small_table, 2)
        u0 = tiny_graph.entity_id("user", "u0")
        found = beam_search(u0, policy, tiny_graph, small_table, [2, 2])
        assert len(found) == 4


class TestRanking:
    @pytest.fixture
    def brand_graph(self, schema):
        """u0 bought i0; i0..i3 share brand b0, so i1..i3 are reachable and
        recommendable through the brand in three hops."""
        g = KnowledgeGraph(schema)
        u0 = g.add_entity("user", "u0")
        items = [g.add_entity("item", f"i{n}") for n in range(4)]
        b0 = g.add_entity("brand", "b0")
        pb = g.relation_id("produced_by")
        for it in items:
            g.add_triplet(it, pb, b0)
        g.add_triplet(u0, g.relation_id("purchase"), items[0])
        return g.freeze()

    def path_to(self, g, item_name, budget=3):
        u0 = g.entity_id("user", "u0")
        i0 = g.entity_id("item", "i0")
        b0 = g.entity_id("brand", "b0")
        target = g.entity_id("item", item_name)
        s = PathState.start(u0, budget)
        s = step(s, Action(g.relation_id("purchase"), i0, FORWARD), g)
        s = step(s, Action(g.relation_id("produced_by"), b0, FORWARD), g)
        s = step(s, Action(g.relation_id("produced_by"), target, INVERSE), g)
        return s

    def test_order_dedup_and_filtering(self, brand_graph):
        g = brand_graph
        table = init_table(g, EmbedTrainConfig(dim=8, seed=2))
        u0 = g.entity_id("user", "u0")
        b0 = g.entity_id("brand", "b0")
        to_brand = PathState.start(u0, 3)
        to_brand = step(to_brand, Action(g.relation_id("purchase"),
                                         g.entity_id("item", "i0"), FORWARD), g)
        to_brand = step(to_brand, Action(g.relation_id("produced_by"), b0,
                                         FORWARD), g)
        to_brand = step(to_brand, Action(SELF_LOOP, b0, FORWARD), g)
        i0 = g.entity_id("item", "i0")
        to_seen = PathState.start(u0, 3)
        to_seen = step(to_seen, Action(g.relation_id("purchase"), i0, FORWARD), g)
        to_seen = step(to_seen, Action(SELF_LOOP, i0, FORWARD), g)
        to_seen = step(to_seen, Action(SELF_LOOP, i0, FORWARD), g)

        paths = [
            ScoredPath(self.path_to(g, "i3"), -0.5),
            ScoredPath(self.path_to(g, "i1"), -1.0),
            ScoredPath(self.path_to(g, "i2"), -1.0),
            ScoredPath(self.path_to(g, "i1"), -2.0),  # dominated duplicate
            ScoredPath(to_brand, -0.1),               # not an item
            ScoredPath(to_seen, -0.05),               # already purchased
        ]
        ids = {n: g.entity_id("item", n) for n in ("i1", "i2", "i3")}
        f = score_tails(table, u0, g.interaction_relation,
                        np.asarray([ids["i1"], ids["i2"]], dtype=np.intp))
        tie = sorted(["i1", "i2"],
                     key=lambda n: (-f[0 if n == "i1" else 1], ids[n]))

        full = rank_recommendations(paths, g, table, u0, k=10)
        assert full.items() == [ids["i3"], ids[tie[0]], ids[tie[1]]]
        assert [e.rank for e in full.entries] == [1, 2, 3]
        by_item = {e.item: e for e in full.entries}
        assert by_item[ids["i1"]].logprob == -1.0  # dedup kept the better path

        top2 = rank_recommendations(paths, g, table, u0, k=2)
        assert top2.items() == full.items()[:2]

    def test_foreign_user_rejected(self, tiny_graph, small_table):
        u0 = tiny_graph.entity_id("user", "u0")
        u1 = tiny_graph.entity_id("user", "u1")
        stray = ScoredPath(PathState.start(u1, 1), 0.0)
        with pytest.raises(UnknownUser):
            rank_recommendations([stray], tiny_graph, small_table, u0, k=5)

    def test_no_candidates_gives_empty_list(self, tiny_graph, small_table):
        u0 = tiny_graph.entity_id("user", "u0")
        out = rank_recommendations([], tiny_graph, small_table, u0, k=5)
        assert out.entries == ()
        assert out.items() == []


class TestExplanations:
    def test_self_loops_elided_and_round_trip(self, tiny_graph):
        g = tiny_graph
        u0 = g.entity_id("user", "u0")
        i0 = g.entity_id("item", "i0")
        s = PathState.start(u0, 3)
        s = step(s, Action(g.relation_id("purchase"), i0, FORWARD), g)
        s = step(s, Action(SELF_LOOP, i0, FORWARD), g)
        s = step(s, Action(SELF_LOOP, i0, FORWARD), g)
        exp = explain(ScoredPath(s, -1.5), g)
        assert not exp.no_recommendation
        assert len(exp.hops) == 1
        assert exp.to_text() == "user:u0 -[purchase]-> item:i0"
        assert exp.entity_ids == s.entities
        assert exp.relation_ids == s.relations

    def test_inverse_hop_rendering(self, tiny_graph):
        g = tiny_graph
        u0 = g.entity_id("user", "u0")
        i0 = g.entity_id("item", "i0")
        b0 = g.entity_id("brand", "b0")
        i1 = g.entity_id("item", "i1")
        s = PathState.start(u0, 3)
        s = step(s, Action(g.relation_id("purchase"), i0, FORWARD), g)
        s = step(s, Action(g.relation_id("produced_by"), b0, FORWARD), g)
        s = step(s, Action(g.relation_id("produced_by"), i1, INVERSE), g)
        text = explain(s, g).to_text()
        assert text == ("user:u0 -[purchase]-> item:i0; "
                        "item:i0 -[produced_by]-> brand:b0; "
                        "brand:b0 <-[produced_by]- item:i1")

    def test_all_self_loops_is_no_recommendation(self, tiny_graph):
        g = tiny_graph
        u0 = g.entity_id("user", "u0")
        s = PathState.start(u0, 2)
        s = step(s, Action(SELF_LOOP, u0, FORWARD), g)
        s = step(s, Action(SELF_LOOP, u0, FORWARD), g)
        exp = explain(s, g)
        assert exp.no_recommendation
        assert "no recommendation" in exp.to_text()
        assert exp.hops == ()
