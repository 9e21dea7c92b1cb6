"""Chain-composition environment and graph-encoded policy optimization.

An episode serves one user prompt: the policy first picks a translator
(an edge model with a service fee), the translated preference vector is
calibrated against a short context memory, and the policy then extends
the service chain node by node.  Step rewards blend a type-match flag
with preference-weighted normalized agent factors; the terminal bonus is
the preference-weighted QoE of the finished chain minus the translator
fee.  The policy is a two-layer GCN over the agent graph, mean-pooled and
concatenated with intent and translator embeddings, feeding actor and
critic heads; optimization is clipped-surrogate PPO by default with a
plain policy-gradient variant available.

All forward/backward passes are explicit numpy; gradients are finite-
difference checked in the tests.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import nn, qoe
from .errors import StructuralError, TrainingError
from .intent import IntentSample, Prompt, angular_distance, project_preference
from .seeding import derive_seed

EVEN_PREFERENCE = np.full(4, 0.25)


# ---------------------------------------------------------------------------
# translator market


@dataclass
class ElamProfile:
    """A selectable intent translator with its service fee."""

    id: int
    name: str
    fee: float
    translator: Callable[[Prompt], np.ndarray | None]  # None signals failure

    def __post_init__(self):
        if self.fee < 0 or not math.isfinite(self.fee):
            raise ValueError("fee must be finite and >= 0")


def student_elam(elam_id: int, name: str, fee: float, model, p_min: float) -> ElamProfile:
    from .distill import predict

    return ElamProfile(
        id=elam_id, name=name, fee=fee, translator=lambda p: predict(model, p.text, p_min)
    )


def even_stub_elam(elam_id: int, fee: float = 0.0) -> ElamProfile:
    return ElamProfile(
        id=elam_id, name="even-stub", fee=fee, translator=lambda p: EVEN_PREFERENCE.copy()
    )


def oracle_stub_elam(elam_id: int, oracle, fee: float = 0.0, name: str = "oracle-stub") -> ElamProfile:
    return ElamProfile(id=elam_id, name=name, fee=fee, translator=oracle.translate)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SrlConfig:
    algo: str = "ppo"  # or "reinforce"
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    update_every: int = 8  # episodes per policy update
    step_delta: float = 1.0
    fail_penalty: float = 5.0
    arrival_rate: float = 0.8
    graph_restricted: bool = True
    hidden: int = 64
    intent_embed: int = 16
    model_embed: int = 16
    memory_capacity: int = 64
    memory_k: int = 8
    calibrate: bool = True
    calib_d0: float = 0.1
    calib_d1: float = 0.4
    calib_iota_min: float = 0.3
    confidence_gate: bool = True
    preference_override: np.ndarray | None = None  # fixed preference (even-DRL)
    seed: int = 0

    def __post_init__(self):
        if self.algo not in ("ppo", "reinforce"):
            raise ValueError("algo must be 'ppo' or 'reinforce'")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("invalid discounting")


# ---------------------------------------------------------------------------
# context memory and calibration


class ContextMemory:
    """Ring buffer of (prompt, preference, episode reward) records."""

    def __init__(self, capacity: int = 64):
        self.entries: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, prompt_text: str, preference: np.ndarray, reward: float) -> None:
        self.entries.append((prompt_text, np.asarray(preference, dtype=np.float64), reward))

    def recent(self, k: int) -> list:
        return list(self.entries)[-k:]

    def recent_mean(self, k: int) -> np.ndarray | None:
        recent = self.recent(k)
        if not recent:
            return None
        return project_preference(np.mean([r[1] for r in recent], axis=0))


def _consistent_and_improving(memory: ContextMemory, config: SrlConfig) -> bool:
    """True when the recent window shows tightly clustered preferences and a
    non-decreasing reward trend; prediction shrinkage is then skipped."""
    recent = memory.recent(config.memory_k)
    if len(recent) < config.memory_k:
        return False
    prefs = [r[1] for r in recent]
    center = project_preference(np.mean(prefs, axis=0))
    if max(angular_distance(p, center) for p in prefs) > config.calib_d0:
        return False
    rewards = [r[2] for r in recent]
    half = len(rewards) // 2
    return float(np.mean(rewards[half:])) >= float(np.mean(rewards[:half]))


def calibrate(s_pred: np.ndarray, memory: ContextMemory, config: SrlConfig) -> np.ndarray:
    """Shrink an outlying predicted preference toward the recent-memory mean.

    The blend weight iota is 1 up to angular distance d0, falls linearly to
    iota_min at d1, and stays there beyond; an empty memory or a consistent,
    improving context window leaves the prediction untouched.
    """
    s_recent = memory.recent_mean(config.memory_k)
    if s_recent is None:
        return s_pred
    if config.confidence_gate and _consistent_and_improving(memory, config):
        return s_pred
    dist = angular_distance(s_pred, s_recent)
    if dist <= config.calib_d0:
        iota = 1.0
    elif dist >= config.calib_d1:
        iota = config.calib_iota_min
    else:
        frac = (dist - config.calib_d0) / (config.calib_d1 - config.calib_d0)
        iota = 1.0 - frac * (1.0 - config.calib_iota_min)
    return project_preference(iota * s_pred + (1.0 - iota) * s_recent)


# ---------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class EnvState:
    node_features: np.ndarray  # (N, 6), all values in [0, 1]
    preference: np.ndarray
    elam_index: int  # n_elams means "not selected yet"
    step_index: int  # node decisions taken so far; -1 before translator choice
    partial_chain: tuple[int, ...]


class ChainEnv:
    """Sequential chain builder over a fixed agentic network.

    Node features are [minmax log10 compute, minmax latency, minmax
    observations, minmax failures, selected flag, last-selected flag].
    Reward factors are oriented so 1 is always most desirable; degenerate
    (constant) attributes normalize to 1 since any choice is then best.
    """

    def __init__(
        self,
        network: qoe.AgenticNetwork,
        template: qoe.RequestTemplate,
        config: SrlConfig,
    ):
        self.network = network
        self.template = template
        self.config = config
        self.n_agents = len(network)
        self.n_steps = len(template.required_types)
        agents = sorted(network.agents, key=lambda a: a.id)

        adjacency = np.zeros((self.n_agents, self.n_agents))
        for link in network.links:
            a, b = link.key
            adjacency[a, b] = adjacency[b, a] = 1.0
        self.norm_adj = nn.normalized_adjacency(adjacency)

        log_budget = np.array([math.log10(a.compute_budget) for a in agents])
        latency = np.array(
            [
                qoe.agent_latency(config.arrival_rate, a.service_rate, a.service_time_std)[0]
                for a in agents
            ]
        )
        observations = np.array([float(a.observations) for a in agents])
        failures = np.array([float(a.failures) for a in agents])
        self._base_features = np.zeros((self.n_agents, 6))
        self._base_features[:, 0] = self._minmax(log_budget)
        self._base_features[:, 1] = self._minmax(latency)
        self._base_features[:, 2] = self._minmax(observations)
        self._base_features[:, 3] = self._minmax(failures)

        capability = np.array(
            [
                qoe.agent_capability(qoe.pretraining_loss(a.compute_budget, network.constants)[0])
                for a in agents
            ]
        )
        crash = np.array([a.crash_rate for a in agents])
        self._cap_best = self._minmax_best(capability)
        self._lat_best = 1.0 - self._minmax_best(latency)
        self._crash_best = 1.0 - self._minmax_best(crash)
        self._max_ber = max((l.mean_ber for l in network.links), default=0.0)

    @staticmethod
    def _minmax(values: np.ndarray) -> np.ndarray:
        scale = values.max() - values.min()
        if scale <= 0.0:
            return np.zeros_like(values)
        return (values - values.min()) / scale

    @staticmethod
    def _minmax_best(values: np.ndarray) -> np.ndarray:
        # degenerate population: every choice is as good as any other
        scale = values.max() - values.min()
        if scale <= 0.0:
            return np.ones_like(values)
        return (values - values.min()) / scale

    def start(self, preference: np.ndarray, elam_index: int) -> EnvState:
        return EnvState(
            node_features=self._base_features.copy(),
            preference=np.asarray(preference, dtype=np.float64),
            elam_index=elam_index,
            step_index=0,
            partial_chain=(),
        )

    def valid_actions(self, state: EnvState) -> np.ndarray:
        """Boolean node mask: any agent first, then unselected graph
        neighbors of the last pick (or all unselected when unrestricted)."""
        mask = np.zeros(self.n_agents, dtype=bool)
        if state.step_index == 0:
            mask[:] = True
            return mask
        selected = set(state.partial_chain)
        if self.config.graph_restricted:
            candidates = self.network.neighbors(state.partial_chain[-1]) - selected
        else:
            candidates = set(range(self.n_agents)) - selected
        mask[sorted(candidates)] = True
        return mask

    def step_factors(self, state: EnvState, node: int) -> np.ndarray:
        """Normalized desirability of a candidate along the four preference
        dimensions (capability, link BER, latency, crash)."""
        if state.partial_chain:
            ber = self.network.link_ber(state.partial_chain[-1], node)
            ber_best = 1.0 if self._max_ber <= 0.0 else 1.0 - ber / self._max_ber
        else:
            ber_best = 1.0  # no inbound link yet: best possible
        return np.array(
            [self._cap_best[node], ber_best, self._lat_best[node], self._crash_best[node]]
        )

    def step(self, state: EnvState, node: int) -> tuple[float, EnvState, bool]:
        mask = self.valid_actions(state)
        if not mask[node]:
            raise ValueError(f"action {node} is masked at step {state.step_index}")
        wanted = self.template.required_types[state.step_index]
        flag = (
            self.config.step_delta
            if self.network.agent(node).service_type == wanted
            else -self.config.step_delta
        )
        reward = flag + float(state.preference @ self.step_factors(state, node))
        features = state.node_features.copy()
        features[:, 5] = 0.0
        features[node, 4] = 1.0
        features[node, 5] = 1.0
        chain = state.partial_chain + (node,)
        next_state = EnvState(
            node_features=features,
            preference=state.preference,
            elam_index=state.elam_index,
            step_index=state.step_index + 1,
            partial_chain=chain,
        )
        return reward, next_state, len(chain) == self.n_steps

    def finalize(self, state: EnvState, fee: float) -> tuple[float, qoe.QoEBreakdown | None]:
        """Terminal bonus of a finished episode; dead ends earn the failure
        penalty."""
        if len(state.partial_chain) < self.n_steps:
            return -self.config.fail_penalty, None
        chain = qoe.GenSFC(state.partial_chain, self.config.arrival_rate)
        try:
            breakdown = qoe.evaluate_chain(self.network, chain, self.template)
        except StructuralError:
            return -self.config.fail_penalty, None
        reward = qoe.subjective_episode_reward(
            breakdown, state.preference, self.template.capability_threshold, fee
        )
        return reward, breakdown


# ---------------------------------------------------------------------------
# policy network


class PolicyNet:
    """GCN encoder with intent/translator embeddings and actor-critic heads.

    Action slots: 0..N-1 select nodes, N..N+E-1 select translators; masks
    keep the two decision kinds separate.  The critic shares the encoder.
    """

    def __init__(self, n_agents: int, n_elams: int, config: SrlConfig, seed: int = 0):
        self.n_agents = n_agents
        self.n_elams = n_elams
        self.n_actions = n_agents + n_elams
        self.config = config
        h = config.hidden
        zi = config.intent_embed
        zm = config.model_embed
        self.z_dim = h + zi + zm
        rng = np.random.default_rng(derive_seed(seed, "policy-init"))
        self.params = nn.ParamBundle(
            params={
                "gcn_w0": nn.xavier_uniform((6, h), rng),
                "gcn_w1": nn.xavier_uniform((h, h), rng),
                "intent_w": nn.xavier_uniform((4, zi), rng),
                "intent_b": np.zeros(zi),
                "model_emb": 0.1 * rng.standard_normal((n_elams + 1, zm)),
                "actor_w1": nn.xavier_uniform((self.z_dim, h), rng),
                "actor_b1": np.zeros(h),
                "actor_w2": nn.xavier_uniform((h, self.n_actions), rng),
                "actor_b2": np.zeros(self.n_actions),
                "critic_w1": nn.xavier_uniform((self.z_dim, h), rng),
                "critic_b1": np.zeros(h),
                "critic_w2": nn.xavier_uniform((h, 1), rng),
                "critic_b2": np.zeros(1),
            }
        )

    # -- batched forward/backward ------------------------------------------

    def forward(self, norm_adj, feats, prefs, elam_idx):
        """feats (B,N,6), prefs (B,4), elam_idx (B,) ->
        (logits (B,A), values (B,), cache)."""
        p = self.params.params
        agg1 = np.matmul(norm_adj, feats)
        pre1 = agg1 @ p["gcn_w0"]
        h1 = np.maximum(pre1, 0.0)
        agg2 = np.matmul(norm_adj, h1)
        pre2 = agg2 @ p["gcn_w1"]
        h2 = np.maximum(pre2, 0.0)
        h_graph = h2.mean(axis=1)

        pre_i = prefs @ p["intent_w"] + p["intent_b"]
        h_intent = np.maximum(pre_i, 0.0)
        h_model = p["model_emb"][elam_idx]
        z = np.concatenate([h_graph, h_intent, h_model], axis=1)

        pre_a = z @ p["actor_w1"] + p["actor_b1"]
        ha = np.maximum(pre_a, 0.0)
        logits = ha @ p["actor_w2"] + p["actor_b2"]
        pre_c = z @ p["critic_w1"] + p["critic_b1"]
        hc = np.maximum(pre_c, 0.0)
        values = (hc @ p["critic_w2"] + p["critic_b2"])[:, 0]
        cache = (feats, agg1, pre1, agg2, pre2, prefs, pre_i, elam_idx, z, pre_a, ha, pre_c, hc)
        return logits, values, cache

    def backward(self, norm_adj, cache, dlogits, dvalues):
        p = self.params.params
        (feats, agg1, pre1, agg2, pre2, prefs, pre_i, elam_idx, z, pre_a, ha, pre_c, hc) = cache
        b, n, _ = feats.shape

        d_actor_w2 = ha.T @ dlogits
        d_actor_b2 = dlogits.sum(axis=0)
        d_ha = dlogits @ p["actor_w2"].T
        d_pre_a = d_ha * (pre_a > 0.0)
        d_actor_w1 = z.T @ d_pre_a
        d_actor_b1 = d_pre_a.sum(axis=0)
        dz = d_pre_a @ p["actor_w1"].T

        dv = dvalues[:, None]
        d_hc = dv @ p["critic_w2"].T
        d_pre_c = d_hc * (pre_c > 0.0)
        d_critic_w2 = hc.T @ dv
        d_critic_b2 = dv.sum(axis=0)
        d_critic_w1 = z.T @ d_pre_c
        d_critic_b1 = d_pre_c.sum(axis=0)
        dz += d_pre_c @ p["critic_w1"].T

        h = self.config.hidden
        zi = self.config.intent_embed
        d_hg = dz[:, :h]
        d_hi = dz[:, h : h + zi]
        d_hm = dz[:, h + zi :]

        d_pre_i = d_hi * (pre_i > 0.0)
        d_intent_w = prefs.T @ d_pre_i
        d_intent_b = d_pre_i.sum(axis=0)
        d_model_emb = np.zeros_like(p["model_emb"])
        np.add.at(d_model_emb, elam_idx, d_hm)

        d_h2 = np.broadcast_to(d_hg[:, None, :] / n, (b, n, h)).copy()
        d_pre2 = d_h2 * (pre2 > 0.0)
        d_gcn_w1 = agg2.reshape(b * n, -1).T @ d_pre2.reshape(b * n, -1)
        d_h1 = np.matmul(norm_adj.T, d_pre2 @ p["gcn_w1"].T)
        d_pre1 = d_h1 * (pre1 > 0.0)
        d_gcn_w0 = agg1.reshape(b * n, -1).T @ d_pre1.reshape(b * n, -1)

        return {
            "gcn_w0": d_gcn_w0,
            "gcn_w1": d_gcn_w1,
            "intent_w": d_intent_w,
            "intent_b": d_intent_b,
            "model_emb": d_model_emb,
            "actor_w1": d_actor_w1,
            "actor_b1": d_actor_b1,
            "actor_w2": d_actor_w2,
            "actor_b2": d_actor_b2,
            "critic_w1": d_critic_w1,
            "critic_b1": d_critic_b1,
            "critic_w2": d_critic_w2,
            "critic_b2": d_critic_b2,
        }

    # -- acting --------------------------------------------------------------

    def encode_single(self, norm_adj, state: EnvState):
        logits, values, _ = self.forward(
            norm_adj,
            state.node_features[None, :, :],
            state.preference[None, :],
            np.array([state.elam_index]),
        )
        return logits[0], values[0]

    def act(
        self,
        norm_adj,
        state: EnvState,
        mask: np.ndarray,
        rng: np.random.Generator,
        greedy: bool = False,
    ) -> tuple[int, float, float]:
        """Sample (or argmax) a masked action; returns (action, logprob, value)."""
        if not mask.any():
            raise ValueError("mask must have at least one valid action")
        logits, value = self.encode_single(norm_adj, state)
        masked = np.where(mask, logits, -np.inf)
        log_probs = nn.log_softmax(masked)
        if greedy:
            action = int(np.argmax(masked))
        else:
            probs = np.exp(log_probs)
            action = int(rng.choice(self.n_actions, p=probs / probs.sum()))
        return action, float(log_probs[action]), float(value)


def masked_log_softmax(logits: np.ndarray, masks: np.ndarray) -> np.ndarray:
    return nn.log_softmax(np.where(masks, logits, -np.inf))


def masked_entropy(log_probs: np.ndarray) -> np.ndarray:
    probs = np.exp(log_probs)
    terms = probs * np.where(probs > 0.0, log_probs, 0.0)  # 0 * -inf guard
    return -terms.sum(axis=-1)


# ---------------------------------------------------------------------------
# advantage estimation


def gae(rewards, values, gamma: float, gae_lambda: float) -> np.ndarray:
    """Generalized advantage estimates with a zero bootstrap at terminal."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    advantages = np.zeros_like(rewards)
    running = 0.0
    next_value = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * gae_lambda * running
        advantages[t] = running
        next_value = values[t]
    return advantages


# ---------------------------------------------------------------------------
# updates


@dataclass
class Transition:
    features: np.ndarray
    preference: np.ndarray
    elam_index: int
    mask: np.ndarray
    action: int
    logprob: float
    value: float
    reward: float
    advantage: float = 0.0
    ret: float = 0.0


def _stack_batch(batch: list[Transition]):
    feats = np.stack([t.features for t in batch])
    prefs = np.stack([t.preference for t in batch])
    elams = np.array([t.elam_index for t in batch])
    masks = np.stack([t.mask for t in batch])
    actions = np.array([t.action for t in batch])
    old_lp = np.array([t.logprob for t in batch])
    advs = np.array([t.advantage for t in batch])
    rets = np.array([t.ret for t in batch])
    return feats, prefs, elams, masks, actions, old_lp, advs, rets


def policy_loss_and_grads(
    policy: PolicyNet,
    norm_adj: np.ndarray,
    batch: list[Transition],
    config: SrlConfig,
    clipped: bool = True,
):
    """Surrogate + value + entropy loss over a minibatch with gradients.

    With ``clipped`` the actor term is the PPO clipped surrogate; without
    it the plain policy-gradient term, which coincides with PPO at ratio 1.
    """
    feats, prefs, elams, masks, actions, old_lp, advs, rets = _stack_batch(batch)
    b = len(batch)
    logits, values, cache = policy.forward(norm_adj, feats, prefs, elams)
    log_probs = masked_log_softmax(logits, masks)
    lp_a = log_probs[np.arange(b), actions]
    ratio = np.exp(lp_a - old_lp)

    if clipped:
        surr1 = ratio * advs
        surr2 = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * advs
        actor_loss = -float(np.minimum(surr1, surr2).mean())
        flow = surr1 <= surr2  # gradient flows only through the unclipped branch
        d_lp_a = -(advs * ratio * flow) / b
    else:
        actor_loss = -float((lp_a * advs).mean())
        d_lp_a = -advs / b

    entropy = masked_entropy(log_probs)
    mean_entropy = float(entropy.mean())
    value_err = values - rets
    critic_loss = float((value_err**2).mean())
    total = actor_loss + config.value_coef * critic_loss - config.entropy_coef * mean_entropy

    upstream = np.zeros_like(log_probs)
    upstream[np.arange(b), actions] = d_lp_a
    probs = np.exp(log_probs)
    dlogits = upstream - probs * upstream.sum(axis=1, keepdims=True)
    # entropy term: dH/dlogits = -p (logp + H); loss carries -coef * H
    lp_safe = np.where(probs > 0.0, log_probs, 0.0)
    dlogits += (config.entropy_coef / b) * probs * (lp_safe + entropy[:, None])
    dvalues = (2.0 * config.value_coef / b) * value_err

    grads = policy.backward(norm_adj, cache, dlogits, dvalues)
    losses = {
        "actor_loss": actor_loss,
        "critic_loss": critic_loss,
        "entropy": mean_entropy,
        "total": total,
        "mean_ratio": float(ratio.mean()),
    }
    return total, grads, losses


def ppo_update(
    policy: PolicyNet,
    norm_adj: np.ndarray,
    batch: list[Transition],
    config: SrlConfig,
    rng: np.random.Generator,
) -> dict:
    """K epochs of clipped-surrogate minibatch updates over one batch."""
    losses = {}
    for _ in range(config.ppo_epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            minibatch = [batch[i] for i in idx]
            total, grads, losses = policy_loss_and_grads(
                policy, norm_adj, minibatch, config, clipped=True
            )
            if not math.isfinite(total):
                raise TrainingError("non-finite PPO loss")
            policy.params.adam_step(grads, config.learning_rate)
    return losses


def reinforce_update(
    policy: PolicyNet,
    norm_adj: np.ndarray,
    batch: list[Transition],
    config: SrlConfig,
    rng: np.random.Generator,
) -> dict:
    """Single-pass policy gradient with the same advantage pipeline."""
    total, grads, losses = policy_loss_and_grads(
        policy, norm_adj, batch, config, clipped=False
    )
    if not math.isfinite(total):
        raise TrainingError("non-finite policy-gradient loss")
    policy.params.adam_step(grads, config.learning_rate)
    return losses


def normalize_advantages(batch: list[Transition]) -> None:
    advs = np.array([t.advantage for t in batch])
    std = advs.std()
    mean = advs.mean()
    if std < 1e-8:
        return
    for t in batch:
        t.advantage = (t.advantage - mean) / std


# ---------------------------------------------------------------------------
# episode runner


@dataclass
class EpisodeResult:
    transitions: list[Transition]
    chain: tuple[int, ...]
    elam_id: int
    fee: float
    preference: np.ndarray
    reward_episode: float
    reward_gt: float
    breakdown: qoe.QoEBreakdown | None
    dead_end: bool


class SrlRunner:
    """Owns the environment, translator market, policy, and context memory."""

    def __init__(
        self,
        network: qoe.AgenticNetwork,
        template: qoe.RequestTemplate,
        elams: list[ElamProfile],
        config: SrlConfig,
        policy: PolicyNet | None = None,
    ):
        if not elams:
            raise ValueError("at least one translator is required")
        self.env = ChainEnv(network, template, config)
        self.elams = list(elams)
        self.config = config
        self.policy = policy or PolicyNet(len(network), len(elams), config, seed=config.seed)
        self.memory = ContextMemory(config.memory_capacity)

    def elam_mask(self) -> np.ndarray:
        mask = np.zeros(self.policy.n_actions, dtype=bool)
        mask[self.env.n_agents :] = True
        return mask

    def node_mask(self, state: EnvState) -> np.ndarray:
        mask = np.zeros(self.policy.n_actions, dtype=bool)
        mask[: self.env.n_agents] = self.env.valid_actions(state)
        return mask

    def translate(self, prompt: Prompt, elam: ElamProfile) -> np.ndarray:
        """Translator output, calibrated; falls back to the recent memory
        mean (or the even vector) for one round on translator failure."""
        if self.config.preference_override is not None:
            return np.asarray(self.config.preference_override, dtype=np.float64)
        raw = elam.translator(prompt)
        if raw is None:
            fallback = self.memory.recent_mean(self.config.memory_k)
            return fallback if fallback is not None else EVEN_PREFERENCE.copy()
        if self.config.calibrate:
            return calibrate(np.asarray(raw, dtype=np.float64), self.memory, self.config)
        return np.asarray(raw, dtype=np.float64)

    def run_episode(
        self,
        sample: IntentSample,
        rng: np.random.Generator,
        greedy: bool = False,
        forced_elam: int | None = None,
        update_memory: bool = True,
    ) -> EpisodeResult:
        transitions: list[Transition] = []
        pre_state = self.env.start(EVEN_PREFERENCE.copy(), len(self.elams))

        if forced_elam is None and len(self.elams) > 1:
            mask = self.elam_mask()
            action, logprob, value = self.policy.act(
                self.env.norm_adj, pre_state, mask, rng, greedy=greedy
            )
            elam_choice = action - self.env.n_agents
            transitions.append(
                Transition(
                    features=pre_state.node_features,
                    preference=pre_state.preference,
                    elam_index=pre_state.elam_index,
                    mask=mask,
                    action=action,
                    logprob=logprob,
                    value=value,
                    reward=0.0,
                )
            )
        else:
            elam_choice = forced_elam if forced_elam is not None else 0
        elam = self.elams[elam_choice]

        preference = self.translate(sample.prompt, elam)
        state = self.env.start(preference, elam_choice)
        dead_end = False
        for _ in range(self.env.n_steps):
            mask = self.node_mask(state)
            if not mask.any():
                dead_end = True
                break
            action, logprob, value = self.policy.act(
                self.env.norm_adj, state, mask, rng, greedy=greedy
            )
            reward, next_state, _ = self.env.step(state, action)
            transitions.append(
                Transition(
                    features=state.node_features,
                    preference=state.preference,
                    elam_index=state.elam_index,
                    mask=mask,
                    action=action,
                    logprob=logprob,
                    value=value,
                    reward=reward,
                )
            )
            state = next_state

        reward_episode, breakdown = self.env.finalize(state, elam.fee)
        if dead_end:
            reward_episode = -self.config.fail_penalty
        transitions[-1].reward += reward_episode
        if breakdown is not None:
            reward_gt = qoe.subjective_episode_reward(
                breakdown, sample.preference, self.env.template.capability_threshold, elam.fee
            )
        else:
            reward_gt = reward_episode
        if update_memory:
            self.memory.add(sample.prompt.text, preference, reward_episode)
        return EpisodeResult(
            transitions=transitions,
            chain=state.partial_chain,
            elam_id=elam.id,
            fee=elam.fee,
            preference=preference,
            reward_episode=reward_episode,
            reward_gt=reward_gt,
            breakdown=breakdown,
            dead_end=dead_end,
        )


def _episode_row(
    episode: int, variant: str, seed: int, result: EpisodeResult, losses: dict
) -> dict:
    bd = result.breakdown
    return {
        "episode": episode,
        "variant": variant,
        "seed": seed,
        "elam_id": result.elam_id,
        "fee": result.fee,
        "reward_episode": result.reward_episode,
        "reward_gt": result.reward_gt,
        "capability": bd.capability if bd else float("nan"),
        "ber": bd.ber if bd else float("nan"),
        "latency": bd.latency if bd else float("nan"),
        "outage": bd.outage_prob if bd else float("nan"),
        "feasible": int(bd.feasible.all_ok) if bd else 0,
        "actor_loss": losses.get("actor_loss", float("nan")),
        "critic_loss": losses.get("critic_loss", float("nan")),
        "entropy": losses.get("entropy", float("nan")),
        "chain": "-".join(str(a) for a in result.chain),
        "s_c": result.preference[0],
        "s_b": result.preference[1],
        "s_l": result.preference[2],
        "s_p": result.preference[3],
    }


def train_srl(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    intents: list[IntentSample],
    elams: list[ElamProfile],
    config: SrlConfig,
    episodes: int,
    variant: str = "srl",
) -> tuple[SrlRunner, list[dict]]:
    """Train a policy for ``episodes`` episodes over a prompt stream.

    Per episode: sample a prompt, pick a translator (policy action),
    translate and calibrate, roll out the chain, apply the terminal bonus,
    append to the context memory, and batch-update the policy.  Returns
    the runner (policy plus memory) and one log row per episode.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if not intents and episodes > 0:
        raise ValueError("intent stream must be non-empty")
    runner = SrlRunner(network, template, elams, config)
    sample_rng = np.random.default_rng(derive_seed(config.seed, "episodes"))
    act_rng = np.random.default_rng(derive_seed(config.seed, "actions"))
    update_rng = np.random.default_rng(derive_seed(config.seed, "updates"))
    rows: list[dict] = []
    buffered: list[Transition] = []
    buffered_episodes = 0
    losses: dict = {}
    for episode in range(episodes):
        sample = intents[int(sample_rng.integers(len(intents)))]
        result = runner.run_episode(sample, act_rng)
        rewards = [t.reward for t in result.transitions]
        values = [t.value for t in result.transitions]
        advantages = gae(rewards, values, config.gamma, config.gae_lambda)
        for t, adv in zip(result.transitions, advantages):
            t.advantage = float(adv)
            t.ret = float(adv + t.value)
        buffered.extend(result.transitions)
        buffered_episodes += 1
        if buffered_episodes >= config.update_every:
            normalize_advantages(buffered)
            if config.algo == "ppo":
                losses = ppo_update(runner.policy, runner.env.norm_adj, buffered, config, update_rng)
            else:
                losses = reinforce_update(
                    runner.policy, runner.env.norm_adj, buffered, config, update_rng
                )
            buffered = []
            buffered_episodes = 0
        rows.append(_episode_row(episode, variant, config.seed, result, losses))
    return runner, rows


# ---------------------------------------------------------------------------
# baselines


def baseline_random(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    intents: list[IntentSample],
    elams: list[ElamProfile],
    config: SrlConfig,
    episodes: int,
    seed: int,
) -> list[dict]:
    """Uniformly random translator and node choices."""
    env = ChainEnv(network, template, config)
    rng = np.random.default_rng(derive_seed(seed, "baseline-random"))
    rows = []
    for episode in range(episodes):
        sample = intents[int(rng.integers(len(intents)))]
        elam = elams[int(rng.integers(len(elams)))]
        raw = elam.translator(sample.prompt)
        preference = np.asarray(raw, np.float64) if raw is not None else EVEN_PREFERENCE.copy()
        state = env.start(preference, elam.id)
        dead_end = False
        for _ in range(env.n_steps):
            mask = env.valid_actions(state)
            if not mask.any():
                dead_end = True
                break
            choices = np.flatnonzero(mask)
            _, state, _ = env.step(state, int(choices[rng.integers(len(choices))]))
        reward, breakdown = env.finalize(state, elam.fee)
        if dead_end:
            reward = -config.fail_penalty
        result = EpisodeResult(
            transitions=[],
            chain=state.partial_chain,
            elam_id=elam.id,
            fee=elam.fee,
            preference=preference,
            reward_episode=reward,
            reward_gt=(
                qoe.subjective_episode_reward(
                    breakdown, sample.preference, template.capability_threshold, elam.fee
                )
                if breakdown
                else reward
            ),
            breakdown=breakdown,
            dead_end=dead_end,
        )
        rows.append(_episode_row(episode, "random", seed, result, {}))
    return rows


def baseline_greedy(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    intents: list[IntentSample],
    elams: list[ElamProfile],
    config: SrlConfig,
    episodes: int,
    seed: int,
    elam_index: int | None = None,
) -> list[dict]:
    """Myopically maximize the dominant preference dimension.

    At each step the type-correct candidates (all valid candidates when
    none match) are ranked by the normalized factor of the largest
    preference weight, ties by the second-largest weight's factor, then by
    id.  The translator defaults to the most expensive profile, assumed
    the most accurate.
    """
    env = ChainEnv(network, template, config)
    rng = np.random.default_rng(derive_seed(seed, "baseline-greedy"))
    if elam_index is None:
        fees = [e.fee for e in elams]
        elam_index = int(np.argmax(fees))
    elam = elams[elam_index]
    rows = []
    for episode in range(episodes):
        sample = intents[int(rng.integers(len(intents)))]
        raw = elam.translator(sample.prompt)
        preference = np.asarray(raw, np.float64) if raw is not None else EVEN_PREFERENCE.copy()
        order = np.argsort(-preference)  # dominant dimension first
        state = env.start(preference, elam.id)
        dead_end = False
        for step in range(env.n_steps):
            mask = env.valid_actions(state)
            if not mask.any():
                dead_end = True
                break
            candidates = np.flatnonzero(mask)
            wanted = template.required_types[step]
            typed = [c for c in candidates if network.agent(int(c)).service_type == wanted]
            pool = typed if typed else list(candidates)
            factors = {int(c): env.step_factors(state, int(c)) for c in pool}
            best = min(
                pool,
                key=lambda c: (
                    -factors[int(c)][order[0]],
                    -factors[int(c)][order[1]],
                    int(c),
                ),
            )
            _, state, _ = env.step(state, int(best))
        reward, breakdown = env.finalize(state, elam.fee)
        if dead_end:
            reward = -config.fail_penalty
        result = EpisodeResult(
            transitions=[],
            chain=state.partial_chain,
            elam_id=elam.id,
            fee=elam.fee,
            preference=preference,
            reward_episode=reward,
            reward_gt=(
                qoe.subjective_episode_reward(
                    breakdown, sample.preference, template.capability_threshold, elam.fee
                )
                if breakdown
                else reward
            ),
            breakdown=breakdown,
            dead_end=dead_end,
        )
        rows.append(_episode_row(episode, "greedy", seed, result, {}))
    return rows


def baseline_even(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    intents: list[IntentSample],
    elams: list[ElamProfile],
    config: SrlConfig,
    episodes: int,
) -> tuple[SrlRunner, list[dict]]:
    """Full policy training with a constant even preference vector."""
    even_config = replace(config, preference_override=EVEN_PREFERENCE.copy())
    return train_srl(
        network, template, intents, elams, even_config, episodes, variant="even"
    )


# ---------------------------------------------------------------------------
# evaluation helpers


def greedy_chain(runner: SrlRunner, sample: IntentSample, preference: np.ndarray | None = None):
    """Greedy-decoded episode; optionally forces the state preference."""
    rng = np.random.default_rng(0)  # unused under greedy decoding
    if preference is not None:
        override_config = replace(runner.config, preference_override=preference)
        saved = runner.config
        runner.config, runner.env.config = override_config, override_config
        try:
            result = runner.run_episode(sample, rng, greedy=True, update_memory=False)
        finally:
            runner.config, runner.env.config = saved, saved
        return result
    return runner.run_episode(sample, rng, greedy=True, update_memory=False)


def policy_match_experiment(
    runners: dict[int, SrlRunner],
    app_means: dict[int, np.ndarray],
    users: list[IntentSample],
    seed: int,
) -> dict:
    """Fraction of users whose nearest-mean application policy (cosine over
    preference vectors) also earns them the higher ground-truth reward."""
    if set(runners) != set(app_means) or len(runners) < 2:
        raise ValueError("need matching policies and means for >= 2 applications")
    rng = np.random.default_rng(derive_seed(seed, "policy-match"))
    apps = sorted(runners)
    matches = 0
    details = []
    for user in users:
        sims = {
            a: float(
                np.dot(user.preference, app_means[a])
                / (np.linalg.norm(user.preference) * np.linalg.norm(app_means[a]))
            )
            for a in apps
        }
        nearest = max(apps, key=lambda a: sims[a])
        rewards = {}
        for a in apps:
            result = greedy_chain(runners[a], user, preference=user.preference)
            rewards[a] = result.reward_gt
        best_reward = max(rewards.values())
        winners = [a for a in apps if rewards[a] == best_reward]
        winner = winners[0] if len(winners) == 1 else winners[int(rng.integers(len(winners)))]
        matched = winner == nearest
        matches += matched
        details.append({"nearest": nearest, "winner": winner, "rewards": rewards})
    return {"fraction": matches / len(users), "details": details}
