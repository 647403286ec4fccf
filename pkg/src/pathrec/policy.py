"""Feed-forward policy with a scalar baseline, trained by REINFORCE.

The actor maps an encoded path state to one logit per action slot (slot 0
is the self-loop, the rest follow the canonical move order); invalid slots
are masked to -inf before the softmax. Reward is terminal-only and
discounted backward; the learned baseline is fit by squared error and an
entropy bonus keeps exploration alive. All math is float64 numpy, so
training is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .embeddings import EmbeddingTable, rng_for, score_tails
from .errors import EmptyGraph, InvalidSpec, MissingEmbedding
from .graph import KnowledgeGraph
from .mdp import (MAX_ACTIONS_DEFAULT, Action, PathState, RewardSpec,
                  encode_state, step, valid_actions)
from .optim import Adam


@dataclass(frozen=True)
class AgentConfig:
    hop_budget: int = 3
    max_actions: int = MAX_ACTIONS_DEFAULT
    hidden: tuple[int, int] = (512, 256)
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 64
    episodes_per_user: int = 1
    gamma: float = 0.99
    entropy_coef: float = 1e-3
    seed: int = 0
    reward: str = "upgpr"

    def validate(self):
        if self.hop_budget < 1:
            raise InvalidSpec("hop_budget must be >= 1")
        if self.max_actions < 1:
            raise InvalidSpec("max_actions must be >= 1")
        if self.epochs < 0:
            raise InvalidSpec("epochs must be >= 0")
        if not 0 < self.gamma <= 1:
            raise InvalidSpec("gamma must be in (0, 1]")
        if self.reward not in ("upgpr", "pgpr"):
            raise InvalidSpec(f"unknown reward mode {self.reward!r}")
        if len(self.hidden) != 2:
            raise InvalidSpec("policy uses exactly two hidden layers")


class PolicyModel:
    """Two ReLU hidden layers; actor and baseline heads share the trunk."""

    def __init__(self, state_dim: int, config: AgentConfig):
        config.validate()
        self.config = config
        self.state_dim = state_dim
        self.slate_size = 1 + config.max_actions
        h1, h2 = config.hidden
        rng = rng_for(config.seed, "policy-init")
        def layer(fan_in, fan_out):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        self.W1 = layer(state_dim, h1)
        self.b1 = np.zeros(h1)
        self.W2 = layer(h1, h2)
        self.b2 = np.zeros(h2)
        self.W3 = layer(h2, self.slate_size)
        self.b3 = np.zeros(self.slate_size)
        self.Wv = layer(h2, 1)[:, 0]
        self.bv = np.zeros(1)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3, self.Wv, self.bv]

    def forward(self, X: np.ndarray, slate_sizes: np.ndarray):
        """Masked action probabilities, baseline values, and a backward cache."""
        h1 = np.maximum(X @ self.W1 + self.b1, 0.0)
        h2 = np.maximum(h1 @ self.W2 + self.b2, 0.0)
        logits = h2 @ self.W3 + self.b3
        mask = np.arange(self.slate_size) < slate_sizes[:, None]
        logits = np.where(mask, logits, -np.inf)
        logits = logits - logits.max(axis=1, keepdims=True)
        exp = np.where(mask, np.exp(logits), 0.0)
        probs = exp / exp.sum(axis=1, keepdims=True)
        values = h2 @ self.Wv + self.bv[0]
        cache = (X, h1, h2, mask)
        return probs, values, cache

    def backward(self, cache, dlogits: np.ndarray, dvalues: np.ndarray,
                 grads: list[np.ndarray]):
        """Accumulate parameter gradients for one cached forward pass."""
        X, h1, h2, _ = cache
        grads[4] += h2.T @ dlogits
        grads[5] += dlogits.sum(axis=0)
        grads[6] += h2.T @ dvalues
        grads[7][0] += dvalues.sum()
        dh2 = dlogits @ self.W3.T + np.outer(dvalues, self.Wv)
        dz2 = dh2 * (h2 > 0)
        grads[2] += h1.T @ dz2
        grads[3] += dz2.sum(axis=0)
        dh1 = dz2 @ self.W2.T
        dz1 = dh1 * (h1 > 0)
        grads[0] += X.T @ dz1
        grads[1] += dz1.sum(axis=0)

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def save(self, path: str, config_hash: str = ""):
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        np.savez(path, W1=self.W1, b1=self.b1, W2=self.W2, b2=self.b2,
                 W3=self.W3, b3=self.b3, Wv=self.Wv, bv=self.bv,
                 state_dim=np.asarray(self.state_dim),
                 config=np.asarray(json.dumps(cfg, sort_keys=True)),
                 seed=np.asarray(self.config.seed),
                 config_hash=np.asarray(config_hash))

    @classmethod
    def load(cls, path: str) -> "PolicyModel":
        with np.load(path, allow_pickle=False) as data:
            cfg = json.loads(str(data["config"]))
            cfg["hidden"] = tuple(cfg["hidden"])
            model = cls(int(data["state_dim"]), AgentConfig(**cfg))
            for name, param in zip(("W1", "b1", "W2", "b2", "W3", "b3", "Wv", "bv"),
                                   model.params):
                param[...] = data[name]
        return model


def state_dim_for(table: EmbeddingTable, hop_budget: int) -> int:
    return (1 + 2 * hop_budget) * table.dim


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row."""
    u = rng.random(probs.shape[0])
    return (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)


@dataclass
class StepRecord:
    cache: tuple
    probs: np.ndarray
    values: np.ndarray
    chosen: np.ndarray
    slate_sizes: np.ndarray


def rollout_batch(policy: PolicyModel | None, graph: KnowledgeGraph,
                  table: EmbeddingTable, users: list[int], hop_budget: int,
                  max_actions: int, reward_spec: RewardSpec,
                  rng: np.random.Generator,
                  forced_actions: list[list[int]] | None = None):
    """Walk one episode per user; returns (step records, rewards, final states).

    With ``policy=None`` the behavior policy is uniform over each slate
    (records then carry no caches). ``forced_actions[t][b]`` overrides
    sampling with a fixed slot index, used for exact expectation tests.
    """
    states = [PathState.start(u, hop_budget) for u in users]
    # One score vector per start user funds the slate truncation for the
    # whole episode; embeddings are frozen so it never changes mid-walk.
    all_ids = np.arange(graph.entity_count, dtype=np.intp)
    rel = graph.interaction_relation
    scores = {u: score_tails(table, u, rel, all_ids) for u in dict.fromkeys(users)}
    records: list[StepRecord] = []
    for t in range(hop_budget):
        slates = [valid_actions(s, graph, max_actions=max_actions,
                                user_scores=scores[s.user]) for s in states]
        sizes = np.asarray([len(sl) for sl in slates], dtype=np.intp)
        if policy is not None:
            X = np.stack([encode_state(s, table) for s in states])
            probs, values, cache = policy.forward(X, sizes)
        else:
            mask = np.arange(max(sizes.max(), 1)) < sizes[:, None]
            probs = mask / sizes[:, None]
            values = np.zeros(len(states))
            cache = None
        if forced_actions is not None:
            chosen = np.asarray(forced_actions[t], dtype=np.intp)
        else:
            # cumsum can undershoot 1.0 by an ulp; clip into the slate
            chosen = np.minimum(_sample_rows(probs, rng), sizes - 1)
        records.append(StepRecord(cache, probs, values, chosen, sizes))
        states = [step(s, sl[c], graph) for s, sl, c in zip(states, slates, chosen)]
    rewards = np.asarray([reward_spec.terminal_reward(s) for s in states])
    return records, rewards, states


def _apply_reinforce_grads(policy: PolicyModel, records: list[StepRecord],
                           rewards: np.ndarray, gamma: float, entropy_coef: float,
                           grads: list[np.ndarray]):
    """Gradient of the batch loss
    mean_b sum_t [ -log pi(a_t) * (G_t - V_t) + (G_t - V_t)^2 - beta * H_t ].
    Returns the mean per-step entropy for the curve."""
    B = len(rewards)
    T = len(records)
    entropy_sum = 0.0
    for t, rec in enumerate(records):
        G = rewards * gamma ** (T - 1 - t)
        adv = G - rec.values
        p = rec.probs
        with np.errstate(divide="ignore"):
            logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
        H = -(p * logp).sum(axis=1)
        entropy_sum += H.sum()
        # actor: (p - onehot) * adv ; entropy bonus: beta * p * (logp + H)
        dlogits = p * adv[:, None]
        dlogits[np.arange(B), rec.chosen] -= adv
        dlogits += entropy_coef * p * (logp + H[:, None])
        dlogits /= B
        # baseline: d/dV (G - V)^2 = -2 (G - V)
        dvalues = -2.0 * adv / B
        policy.backward(rec.cache, dlogits, dvalues, grads)
    return entropy_sum / (B * T)


def episode_gradients(policy: PolicyModel, graph: KnowledgeGraph,
                      table: EmbeddingTable, users: list[int], config: AgentConfig,
                      reward_spec: RewardSpec, rng: np.random.Generator,
                      forced_actions: list[list[int]] | None = None):
    """One rollout batch and its REINFORCE gradients (exposed for tests)."""
    records, rewards, _ = rollout_batch(policy, graph, table, users,
                                        config.hop_budget, config.max_actions,
                                        reward_spec, rng, forced_actions)
    grads = policy.zero_grads()
    entropy = _apply_reinforce_grads(policy, records, rewards, config.gamma,
                                     config.entropy_coef, grads)
    return grads, rewards, entropy


def training_users(graph: KnowledgeGraph) -> list[int]:
    """Users with at least one training interaction, in id order."""
    return sorted(u for u, items in graph.interactions_by_user().items() if items)


def train_agent(graph: KnowledgeGraph, table: EmbeddingTable,
                reward_spec: RewardSpec, config: AgentConfig):
    """Train a policy on the graph's users; returns (policy, history).

    History rows are (epoch, mean terminal reward, mean entropy), one per
    epoch. With ``epochs=0`` the freshly initialized policy is returned.
    """
    config.validate()
    users = training_users(graph)
    if not users:
        raise EmptyGraph("no users with interactions to train on")
    policy = PolicyModel(state_dim_for(table, config.hop_budget), config)
    opt = Adam(policy.params, lr=config.learning_rate)
    rng = rng_for(config.seed, "agent-train")
    history: list[tuple[int, float, float]] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(users))
        reward_sum, entropy_sum, n_episodes, n_batches = 0.0, 0.0, 0, 0
        for _ in range(config.episodes_per_user):
            for start in range(0, len(order), config.batch_size):
                batch = [users[i] for i in order[start:start + config.batch_size]]
                grads, rewards, entropy = episode_gradients(
                    policy, graph, table, batch, config, reward_spec, rng)
                opt.step(grads)
                reward_sum += rewards.sum()
                entropy_sum += entropy
                n_episodes += len(batch)
                n_batches += 1
        history.append((epoch, reward_sum / n_episodes, entropy_sum / n_batches))
    return policy, history


def evaluate_mean_reward(policy: PolicyModel | None, graph: KnowledgeGraph,
                         table: EmbeddingTable, users: list[int],
                         hop_budget: int, max_actions: int,
                         reward_spec: RewardSpec, seed: int,
                         episodes: int = 1) -> float:
    """Mean terminal reward of stochastic rollouts; ``policy=None`` is the
    uniform-random baseline. The rollout seed stream depends only on
    ``seed``, so two policies can be measured on the same episode draws."""
    rng = rng_for(seed, "reward-eval")
    total = 0.0
    for _ in range(episodes):
        _, rewards, _ = rollout_batch(policy, graph, table, users, hop_budget,
                                      max_actions, reward_spec, rng)
        total += rewards.mean()
    return total / episodes


def write_history(history: list[tuple[int, float, float]], path: str,
                  config_hash: str = "", seed: int = 0):
    with open(path, "w") as fh:
        fh.write(f"# config={config_hash} seed={seed}\n")
        fh.write("epoch,mean_reward,mean_entropy\n")
        for epoch, reward, entropy in history:
            fh.write(f"{epoch},{reward!r},{entropy!r}\n")
