"""Agentic-network model and closed-form QoE math for generative service chains.

An agentic network is an undirected graph of GenAI agents.  A service
chain (GenSFC) is an ordered walk through that graph serving one request
stream.  This module scores a chain on four axes: capability (via a
compute-optimal scaling law), end-to-end bit error rate, M/G/1 service
latency (Pollaczek-Khinchine), and outage probability (agent crashes plus
Poisson overload).  A vectorized FIFO queue simulation is included as an
empirical cross-check for the latency formulas.

All functions here are pure; networks can be shared read-only across
threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StabilityError, StructuralError

__all__ = [
    "ScalingConstants",
    "AgentSpec",
    "LinkSpec",
    "AgenticNetwork",
    "GenSFC",
    "Feasibility",
    "QoEBreakdown",
    "RequestTemplate",
    "pretraining_loss",
    "agent_capability",
    "chain_capability",
    "chain_ber",
    "traffic_intensity",
    "agent_latency",
    "chain_latency",
    "poisson_overload_prob",
    "outage_probability",
    "objective_qoe",
    "subjective_episode_reward",
    "evaluate_chain",
    "mg1_des_oracle",
    "load_scenario",
    "save_scenario",
    "network_from_dict",
    "network_to_dict",
]


@dataclass(frozen=True)
class ScalingConstants:
    """Constants of the compute-optimal pre-training loss law."""

    zeta: float = 406.4
    eta: float = 410.7
    alpha1: float = 0.34
    alpha2: float = 0.28
    l0: float = 0.0

    def validate(self) -> None:
        if self.zeta <= 0 or self.eta <= 0 or self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("scaling constants must be positive")


DEFAULT_CONSTANTS = ScalingConstants()


@dataclass(frozen=True)
class AgentSpec:
    """One agent: its service type, training compute, and queueing/crash stats."""

    id: int
    service_type: int
    compute_budget: float  # training FLOPs
    service_rate: float  # requests per second
    service_time_std: float  # seconds
    observations: int
    failures: int

    def __post_init__(self):
        if self.compute_budget <= 0:
            raise ValueError(f"agent {self.id}: compute_budget must be positive")
        if self.service_rate <= 0:
            raise ValueError(f"agent {self.id}: service_rate must be positive")
        if self.service_time_std < 0:
            raise ValueError(f"agent {self.id}: service_time_std must be >= 0")
        if self.observations < 0 or self.failures < 0:
            raise ValueError(f"agent {self.id}: counts must be >= 0")
        if self.failures > self.observations:
            raise ValueError(f"agent {self.id}: failures exceed observations")

    @property
    def crash_rate(self) -> float:
        if self.observations == 0:
            raise ValueError(f"agent {self.id}: crash rate undefined with 0 observations")
        return self.failures / self.observations


@dataclass(frozen=True)
class LinkSpec:
    """Undirected communication link with its mean bit error rate."""

    a: int
    b: int
    mean_ber: float

    def __post_init__(self):
        if self.a == self.b:
            raise StructuralError(f"self-loop on agent {self.a}")
        if not 0.0 <= self.mean_ber <= 1.0:
            raise ValueError(f"link ({self.a},{self.b}): BER must be in [0,1]")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b) if self.a < self.b else (self.b, self.a)


@dataclass
class AgenticNetwork:
    """Undirected agent graph with per-agent attributes and per-link BER."""

    agents: list[AgentSpec]
    links: list[LinkSpec]
    constants: ScalingConstants = field(default_factory=ScalingConstants)

    def __post_init__(self):
        self.constants.validate()
        ids = [a.id for a in self.agents]
        if sorted(ids) != list(range(len(ids))):
            raise StructuralError("agent ids must be unique and dense in [0, N)")
        self._by_id = {a.id: a for a in self.agents}
        self._ber: dict[tuple[int, int], float] = {}
        self._neighbors: dict[int, set[int]] = {a.id: set() for a in self.agents}
        for link in self.links:
            if link.a not in self._by_id or link.b not in self._by_id:
                raise StructuralError(f"link ({link.a},{link.b}) references unknown agent")
            if link.key in self._ber:
                raise StructuralError(f"duplicate link {link.key}")
            self._ber[link.key] = link.mean_ber
            self._neighbors[link.a].add(link.b)
            self._neighbors[link.b].add(link.a)

    def __len__(self) -> int:
        return len(self.agents)

    def agent(self, agent_id: int) -> AgentSpec:
        try:
            return self._by_id[agent_id]
        except KeyError:
            raise StructuralError(f"unknown agent id {agent_id}") from None

    def neighbors(self, agent_id: int) -> frozenset[int]:
        self.agent(agent_id)
        return frozenset(self._neighbors[agent_id])

    def has_link(self, a: int, b: int) -> bool:
        key = (a, b) if a < b else (b, a)
        return key in self._ber

    def link_ber(self, a: int, b: int) -> float:
        key = (a, b) if a < b else (b, a)
        try:
            return self._ber[key]
        except KeyError:
            raise StructuralError(f"no link between agents {a} and {b}") from None

    def is_connected(self) -> bool:
        if not self.agents:
            return True
        seen = {self.agents[0].id}
        stack = [self.agents[0].id]
        while stack:
            node = stack.pop()
            for nxt in self._neighbors[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.agents)

    def validate_chain(self, chain: "GenSFC") -> None:
        """Raise StructuralError unless the chain is a simple linked walk."""
        if len(chain.agent_ids) == 0:
            raise StructuralError("empty chain")
        if len(set(chain.agent_ids)) != len(chain.agent_ids):
            raise StructuralError("chain repeats an agent")
        for agent_id in chain.agent_ids:
            self.agent(agent_id)
        for prev, cur in zip(chain.agent_ids, chain.agent_ids[1:]):
            if not self.has_link(prev, cur):
                raise StructuralError(f"no link between agents {prev} and {cur}")


@dataclass(frozen=True)
class GenSFC:
    """Ordered agent chain serving one Poisson request stream."""

    agent_ids: tuple[int, ...]
    arrival_rate: float

    def __post_init__(self):
        object.__setattr__(self, "agent_ids", tuple(self.agent_ids))
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be positive")


@dataclass(frozen=True)
class Feasibility:
    """Constraint flags: latency bound, capability threshold, type order."""

    latency: bool
    capability: bool
    succ: bool

    @property
    def all_ok(self) -> bool:
        return self.latency and self.capability and self.succ


@dataclass(frozen=True)
class QoEBreakdown:
    """The four QoE factors of a chain plus its constraint flags."""

    capability: float
    ber: float
    latency: float
    outage_prob: float
    feasible: Feasibility


@dataclass(frozen=True)
class RequestTemplate:
    """Functional requirement of a request: type order and quality bounds."""

    required_types: tuple[int, ...]
    capability_threshold: float
    max_latency: float

    def __post_init__(self):
        object.__setattr__(self, "required_types", tuple(self.required_types))
        if len(self.required_types) < 1:
            raise ValueError("required_types must be non-empty")
        if self.capability_threshold <= 0 or self.max_latency <= 0:
            raise ValueError("thresholds must be positive")


# ---------------------------------------------------------------------------
# capability


def pretraining_loss(
    compute_budget: float, constants: ScalingConstants = DEFAULT_CONSTANTS
) -> tuple[float, float, float]:
    """Compute-optimal pre-training loss for a given training budget.

    Returns (loss, n_opt, d_opt) where n_opt and d_opt are the optimal
    parameter and token counts under the budget split ``C = 6 n d``.
    """
    if compute_budget <= 0:
        raise ValueError("compute_budget must be positive")
    constants.validate()
    z, e = constants.zeta, constants.eta
    a1, a2 = constants.alpha1, constants.alpha2
    inv = 1.0 / (a1 + a2)
    scaled = compute_budget / 6.0
    n_opt = (a1 * z / (a2 * e)) ** inv * scaled ** (a2 * inv)
    d_opt = (a2 * e / (a1 * z)) ** inv * scaled ** (a1 * inv)
    loss = constants.l0 + z / n_opt**a1 + e / d_opt**a2
    return loss, n_opt, d_opt


def agent_capability(loss: float) -> float:
    """Success probability of a single agent given its pre-training loss."""
    if loss < 0:
        raise ValueError("loss must be >= 0")
    return math.exp(-loss)


def chain_capability(network: AgenticNetwork, chain: GenSFC) -> float:
    """Capability of an n-step chain: (1/n) times the product of per-agent
    success probabilities."""
    network.validate_chain(chain)
    product = 1.0
    for agent_id in chain.agent_ids:
        loss, _, _ = pretraining_loss(network.agent(agent_id).compute_budget, network.constants)
        product *= agent_capability(loss)
    return product / len(chain.agent_ids)


# ---------------------------------------------------------------------------
# information loss


def chain_ber(network: AgenticNetwork, chain: GenSFC) -> float:
    """End-to-end bit error rate over the chain's hops; 0 for a single agent."""
    network.validate_chain(chain)
    p_correct = 1.0
    for prev, cur in zip(chain.agent_ids, chain.agent_ids[1:]):
        p_correct *= 1.0 - network.link_ber(prev, cur)
    return 1.0 - p_correct


# ---------------------------------------------------------------------------
# latency


def traffic_intensity(arrival_rate: float, service_rate: float) -> float:
    """Utilization rho = lambda / mu; raises StabilityError when rho >= 1."""
    if arrival_rate <= 0 or service_rate <= 0:
        raise ValueError("rates must be positive")
    rho = arrival_rate / service_rate
    if rho >= 1.0:
        raise StabilityError(f"unstable queue: rho = {rho:.6g} >= 1")
    return rho


def agent_latency(
    arrival_rate: float, service_rate: float, service_time_std: float
) -> tuple[float, float, float]:
    """Mean M/G/1 sojourn time at one agent via Pollaczek-Khinchine.

    Returns (latency, wait, cov): total time in system, mean queueing wait,
    and the service-time coefficient of variation V = sigma * mu.
    """
    if service_time_std < 0:
        raise ValueError("service_time_std must be >= 0")
    rho = traffic_intensity(arrival_rate, service_rate)
    cov = service_time_std * service_rate
    wait = rho * (1.0 + cov * cov) / (2.0 * service_rate * (1.0 - rho))
    return 1.0 / service_rate + wait, wait, cov


def chain_latency(network: AgenticNetwork, chain: GenSFC) -> float:
    """End-to-end latency: sum of per-agent sojourn times at the chain's
    arrival rate.  Transmission delay is excluded."""
    network.validate_chain(chain)
    total = 0.0
    for agent_id in chain.agent_ids:
        spec = network.agent(agent_id)
        try:
            latency, _, _ = agent_latency(
                chain.arrival_rate, spec.service_rate, spec.service_time_std
            )
        except StabilityError as exc:
            raise StabilityError(f"agent {agent_id}: {exc}", agent_id=agent_id) from None
        total += latency
    return total


# ---------------------------------------------------------------------------
# outage


def poisson_overload_prob(arrival_rate: float, lambda_max: float) -> float:
    """Probability of more than floor(lambda_max) Poisson arrivals in a unit
    interval.  Partial sums use the multiplicative term recurrence, so no
    factorials are materialized."""
    if arrival_rate < 0 or lambda_max < 0:
        raise ValueError("rates must be >= 0")
    term = math.exp(-arrival_rate)
    total = term
    for k in range(1, math.floor(lambda_max) + 1):
        term *= arrival_rate / k
        total += term
    # total is a CDF partial sum; clip float residue at the boundary
    return min(max(1.0 - total, 0.0), 1.0)


def outage_probability(network: AgenticNetwork, chain: GenSFC) -> tuple[float, int]:
    """Chain outage probability and the bottleneck agent id.

    Combines independent per-agent crash rates with the probability that
    the offered load exceeds the bottleneck service rate.  The bottleneck
    is the agent with the highest traffic intensity (ties broken by lowest
    agent id); no stability is required here since overload is exactly the
    regime being measured.
    """
    network.validate_chain(chain)
    p_no_crash = 1.0
    best_rho = -1.0
    bottleneck_id = -1
    for agent_id in chain.agent_ids:
        spec = network.agent(agent_id)
        p_no_crash *= 1.0 - spec.crash_rate
        rho = chain.arrival_rate / spec.service_rate
        if rho > best_rho or (rho == best_rho and agent_id < bottleneck_id):
            best_rho = rho
            bottleneck_id = agent_id
    lambda_max = network.agent(bottleneck_id).service_rate
    p_over = poisson_overload_prob(chain.arrival_rate, lambda_max)
    return 1.0 - p_no_crash * (1.0 - p_over), bottleneck_id


# ---------------------------------------------------------------------------
# QoE


def objective_qoe(breakdown: QoEBreakdown, c_th: float) -> float:
    """Weber-Fechner QoE of a chain: log-perceived capability and latency,
    discounted by information loss and outage."""
    if breakdown.capability <= 0 or breakdown.latency <= 0:
        raise ValueError("capability and latency must be positive")
    if c_th <= 0:
        raise ValueError("c_th must be positive")
    return (1.0 - breakdown.outage_prob) * (
        (1.0 - breakdown.ber) * math.log(breakdown.capability / c_th)
        - math.log(breakdown.latency)
    )


def subjective_episode_reward(
    breakdown: QoEBreakdown, s: np.ndarray, c_th: float, fee: float = 0.0
) -> float:
    """Preference-weighted QoE minus the translator service fee.

    ``s`` is the 4-weight preference vector [wC, wB, wL, wP].  Raises
    ValueError when a log argument is non-positive (possible only for a
    zero capability or latency weight); callers are expected to keep
    weights on the floored simplex.
    """
    w_c, w_b, w_l, w_p = (float(x) for x in s)
    if c_th <= 0:
        raise ValueError("c_th must be positive")
    if fee < 0:
        raise ValueError("fee must be >= 0")
    cap_arg = w_c * breakdown.capability / c_th
    lat_arg = w_l * breakdown.latency
    if cap_arg <= 0 or lat_arg <= 0:
        raise ValueError("log argument non-positive; check preference weights")
    return (
        (1.0 - w_p * breakdown.outage_prob)
        * ((1.0 - w_b * breakdown.ber) * math.log(cap_arg) - math.log(lat_arg))
        - fee
    )


def evaluate_chain(
    network: AgenticNetwork, chain: GenSFC, template: RequestTemplate
) -> QoEBreakdown:
    """Score a chain on all four QoE factors and its constraint flags."""
    capability = chain_capability(network, chain)
    ber = chain_ber(network, chain)
    latency = chain_latency(network, chain)
    outage, _ = outage_probability(network, chain)
    types = tuple(network.agent(a).service_type for a in chain.agent_ids)
    feasible = Feasibility(
        latency=latency <= template.max_latency,
        capability=capability >= template.capability_threshold,
        succ=types == template.required_types,
    )
    return QoEBreakdown(
        capability=capability,
        ber=ber,
        latency=latency,
        outage_prob=outage,
        feasible=feasible,
    )


# ---------------------------------------------------------------------------
# empirical latency cross-check


def mg1_des_oracle(
    arrival_rate: float,
    service_rate: float,
    service_time_std: float,
    n_arrivals: int,
    seed: int,
) -> float:
    """Empirical mean sojourn time of a single-server FIFO queue.

    Simulates ``n_arrivals`` Poisson arrivals through one server whose
    service times are lognormal with the given mean 1/mu and standard
    deviation (degenerating to constant service at std 0), then averages
    waiting plus service time per customer.  Waiting times follow the
    Lindley recursion, evaluated in vectorized form as the running
    cumulative sum minus its running minimum.  Sampling uses inverse-CDF
    exponentials and Box-Muller normals over raw PCG64 uniforms, so the
    stream is reproducible across platforms and numpy versions.
    """
    if n_arrivals < 1:
        raise ValueError("n_arrivals must be >= 1")
    traffic_intensity(arrival_rate, service_rate)  # stability check
    rng = np.random.default_rng(seed)
    inter = -np.log1p(-rng.random(n_arrivals)) / arrival_rate
    mean_service = 1.0 / service_rate
    if service_time_std == 0.0:
        services = np.full(n_arrivals, mean_service)
    else:
        ln_var = math.log(1.0 + (service_time_std * service_rate) ** 2)
        u1 = 1.0 - rng.random(n_arrivals)
        u2 = rng.random(n_arrivals)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        services = np.exp(math.log(mean_service) - 0.5 * ln_var + math.sqrt(ln_var) * z)
    drift = services[:-1] - inter[1:]
    cum = np.concatenate(([0.0], np.cumsum(drift)))
    waits = cum - np.minimum.accumulate(cum)
    return float(np.mean(waits) + np.mean(services))


# ---------------------------------------------------------------------------
# scenario file IO


def network_to_dict(network: AgenticNetwork) -> dict:
    """JSON-ready form of a network; agent ids are array indices."""
    agents = sorted(network.agents, key=lambda a: a.id)
    return {
        "agents": [
            {
                "service_type": a.service_type,
                "compute_budget": a.compute_budget,
                "service_rate": a.service_rate,
                "service_time_std": a.service_time_std,
                "observations": a.observations,
                "failures": a.failures,
            }
            for a in agents
        ],
        "links": [
            {"a": link.key[0], "b": link.key[1], "mean_ber": link.mean_ber}
            for link in network.links
        ],
        "constants": {
            "zeta": network.constants.zeta,
            "eta": network.constants.eta,
            "alpha1": network.constants.alpha1,
            "alpha2": network.constants.alpha2,
            "l0": network.constants.l0,
        },
    }


def network_from_dict(data: dict) -> AgenticNetwork:
    agents = [
        AgentSpec(
            id=i,
            service_type=int(spec["service_type"]),
            compute_budget=float(spec["compute_budget"]),
            service_rate=float(spec["service_rate"]),
            service_time_std=float(spec["service_time_std"]),
            observations=int(spec["observations"]),
            failures=int(spec["failures"]),
        )
        for i, spec in enumerate(data["agents"])
    ]
    links = [
        LinkSpec(a=int(l["a"]), b=int(l["b"]), mean_ber=float(l["mean_ber"]))
        for l in data.get("links", [])
    ]
    constants = ScalingConstants(**data.get("constants", {}))
    return AgenticNetwork(agents=agents, links=links, constants=constants)


def save_scenario(network: AgenticNetwork, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(network), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> AgenticNetwork:
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))
