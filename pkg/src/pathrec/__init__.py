"""Path reasoning recommendations over a product knowledge graph.

Translational embeddings score graph triplets, a policy gradient agent
walks user-to-item paths, and new users or items join a trained model
through relation averaged embeddings, without retraining. Every walk that
ends at a recommended item doubles as its explanation.
"""

from .coldstart import (ColdDeclaration, ColdProfile, ColdStrategy,
                        cold_embedding, integrate_cold_entities, recommend_cold)
from .datasets import (DatasetSplit, SplitConfig, SyntheticSpec,
                       generate_synthetic, load_dataset, split_dataset,
                       synthetic_schema)
from .embeddings import (EmbedTrainConfig, EmbeddingTable, conditional_prob,
                         load_table, rng_for, save_table, score_triplet,
                         train_embeddings)
from .graph import (FORWARD, INVERSE, DerivationRule, KGSchema, KnowledgeGraph,
                    RelationSpec)
from .inference import (Explanation, Recommendation, RecommendationList,
                        beam_search, explain, rank_recommendations)
from .mdp import (Action, PathState, RewardSpec, path_signature,
                  reward_binary, reward_pattern, signature_label, step,
                  valid_actions)
from .metrics import (cold_item_coverage, cold_item_proportion, hit_at_k,
                      ndcg_at_k, pattern_report, pop_baseline, popb_at_k,
                      train_popularity)
from .pipeline import RunConfig, run_pipeline, run_seeds, sweep
from .policy import AgentConfig, PolicyModel, evaluate_mean_reward, train_agent

__version__ = "0.1.0"

__all__ = [
    "Action", "AgentConfig", "ColdDeclaration", "ColdProfile", "ColdStrategy",
    "DatasetSplit", "DerivationRule", "EmbedTrainConfig", "EmbeddingTable",
    "Explanation", "FORWARD", "INVERSE", "KGSchema", "KnowledgeGraph",
    "PathState", "PolicyModel", "Recommendation", "RecommendationList",
    "RelationSpec", "RewardSpec", "RunConfig", "SplitConfig", "SyntheticSpec",
    "beam_search", "cold_embedding", "cold_item_coverage",
    "cold_item_proportion", "conditional_prob", "evaluate_mean_reward",
    "explain", "generate_synthetic", "hit_at_k", "integrate_cold_entities",
    "load_dataset", "load_table", "ndcg_at_k", "path_signature",
    "pattern_report", "pop_baseline", "popb_at_k", "rank_recommendations",
    "recommend_cold", "reward_binary", "reward_pattern", "rng_for",
    "run_pipeline", "run_seeds", "save_table", "score_triplet",
    "signature_label", "split_dataset", "step", "sweep", "synthetic_schema",
    "train_agent", "train_embeddings", "train_popularity", "valid_actions",
]
