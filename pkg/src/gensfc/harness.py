"""Scenario and dataset generation, experiment orchestration, persistence.

Everything here is reproducible from (config, master seed): sub-seeds are
derived by a stable hash of the master seed and a stream label, topology
sampling retries deterministically until connected, and all outputs are
plain JSON/CSV so runs can be diffed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import distill, intent, qoe, srl
from .errors import ConfigError
from .seeding import derive_seed

TRAIN_LOG_FIELDS = [
    "episode",
    "variant",
    "seed",
    "elam_id",
    "fee",
    "reward_episode",
    "reward_gt",
    "capability",
    "ber",
    "latency",
    "outage",
    "feasible",
    "actor_loss",
    "critic_loss",
    "entropy",
    "chain",
    "s_c",
    "s_b",
    "s_l",
    "s_p",
]

DISTILL_LOG_FIELDS = ["epoch", "split", "loss", "mae", "mse", "failure_rate", "mean_beta"]


# ---------------------------------------------------------------------------
# scenario generation


@dataclass
class ScenarioConfig:
    n_agents: int = 81
    n_types: int = 4
    compute_budget_range: tuple[float, float] = (1e19, 1e23)  # log-uniform
    service_rate_range: tuple[float, float] = (1.0, 10.0)
    service_time_std_factor: float = 2.0  # sigma ~ U[0, factor / mu]
    compute_rate_tradeoff: float = 0.8  # heavier models serve slower
    crash_rate_range: tuple[float, float] = (0.0, 0.1)
    observations_range: tuple[int, int] = (500, 2000)
    ber_range: tuple[float, float] = (0.0, 0.05)
    topology: str = "erdos-renyi"  # or "complete"
    edge_prob: float = 0.15
    arrival_rate: float = 0.8
    max_topology_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_agents < self.n_types:
            raise ConfigError("need at least one agent per service type")
        if self.topology not in ("erdos-renyi", "complete"):
            raise ConfigError("topology must be 'erdos-renyi' or 'complete'")
        if self.service_rate_range[0] <= self.arrival_rate:
            raise ConfigError("service rates must exceed the arrival rate for stability")


def gen_scenario(config: ScenarioConfig) -> qoe.AgenticNetwork:
    """Deterministic connected scenario with the configured attribute ranges.

    Service types are dealt round-robin over a shuffled agent order so the
    per-type counts stay balanced.
    """
    rng = np.random.default_rng(derive_seed(config.seed, "scenario"))
    order = rng.permutation(config.n_agents)
    types = {int(agent): (pos % config.n_types) + 1 for pos, agent in enumerate(order)}
    lo_c, hi_c = config.compute_budget_range
    lo_mu, hi_mu = config.service_rate_range
    agents = []
    for i in range(config.n_agents):
        budget_frac = float(rng.random())  # position on the log-budget range
        budget = float(10 ** (math.log10(lo_c) + budget_frac * (math.log10(hi_c) - math.log10(lo_c))))
        # capable (heavy) models serve slower: blend anti-correlation with noise
        t = config.compute_rate_tradeoff
        rate_frac = t * (1.0 - budget_frac) + (1.0 - t) * float(rng.random())
        mu = lo_mu + rate_frac * (hi_mu - lo_mu)
        observations = int(rng.integers(config.observations_range[0], config.observations_range[1] + 1))
        crash = float(rng.uniform(*config.crash_rate_range))
        agents.append(
            qoe.AgentSpec(
                id=i,
                service_type=types[i],
                compute_budget=budget,
                service_rate=mu,
                service_time_std=float(rng.uniform(0.0, config.service_time_std_factor / mu)),
                observations=observations,
                failures=int(round(crash * observations)),
            )
        )
    for attempt in range(config.max_topology_retries):
        links = []
        for a in range(config.n_agents):
            for b in range(a + 1, config.n_agents):
                if config.topology == "complete" or rng.random() < config.edge_prob:
                    links.append(qoe.LinkSpec(a, b, float(rng.uniform(*config.ber_range))))
        network = qoe.AgenticNetwork(agents=agents, links=links)
        if network.is_connected():
            return network
    raise ConfigError(
        f"no connected topology after {config.max_topology_retries} attempts; raise edge_prob"
    )


# ---------------------------------------------------------------------------
# intent dataset generation


@dataclass
class IntentConfig:
    applications: tuple[int, ...] = (1, 2)
    n_demo: int = 10
    n_test: int = 200
    train_target: int = 500
    n_historical_per_app: int = 300
    tau_min: float = 0.3
    k_contrastive: int = 4
    teacher_noise: float = 0.05
    outlier_rate: float = 0.0  # junk-label fraction in training data
    seed: int = 0


@dataclass
class IntentBundle:
    """Per-application datasets plus the shared pool and teachers.

    ``oracle`` is the clean labeler (used for test sets and ground-truth
    user preferences); training material is labeled by ``train_oracle``,
    which may carry label noise and junk-label outliers.
    """

    oracle: intent.TeacherOracle
    train_oracle: intent.TeacherOracle
    historical: list[intent.IntentSample]
    demo: dict[int, list[intent.IntentSample]]
    train: dict[int, list[intent.IoKDSample]]
    test: dict[int, list[intent.IntentSample]]

    def app_mean(self, app: int) -> np.ndarray:
        return intent.mean_preference(self.train[app])


def _labeled(oracle, prompts):
    return [intent.IntentSample(p, oracle.translate(p)) for p in prompts]


def gen_intents(config: IntentConfig) -> IntentBundle:
    """Demo/train/test splits per application.

    The training set is the demo samples, the similarity-filtered slice of
    the cross-application historical pool, and teacher-labeled synthetic
    augmentation up to the target size, all labeled by the (possibly
    noisy) training teacher; test prompts are generated from a disjoint
    seed stream, deduplicated against the training texts, and labeled by
    the clean teacher.
    """
    teacher_seed = derive_seed(config.seed, "teacher")
    clean_oracle = intent.TeacherOracle(noise_scale=config.teacher_noise, seed=teacher_seed)
    train_oracle = intent.TeacherOracle(
        noise_scale=config.teacher_noise, outlier_rate=config.outlier_rate, seed=teacher_seed
    )
    historical = []
    for app in config.applications:
        prompts = intent.generate_prompts(
            app, config.n_historical_per_app, seed=derive_seed(config.seed, "historical", app)
        )
        historical.extend(_labeled(train_oracle, prompts))

    demo, train, test = {}, {}, {}
    for app in config.applications:
        # demonstrations stand in for human-curated samples: clean labels
        demo_samples = _labeled(
            clean_oracle,
            intent.generate_prompts(app, config.n_demo, seed=derive_seed(config.seed, "demo", app)),
        )
        relevant = intent.filter_relevant(historical, demo_samples, config.tau_min)
        seed_set = (demo_samples + relevant)[: config.train_target]
        n_aug = config.train_target - len(seed_set)
        train_set = intent.build_iokd_dataset(
            seed_set,
            historical,
            n_aug=n_aug,
            k=config.k_contrastive,
            oracle=train_oracle,
            seed=derive_seed(config.seed, "augment", app),
        )
        train_texts = {s.prompt.text for s in train_set}
        test_samples: list[intent.IntentSample] = []
        batch = 0
        while len(test_samples) < config.n_test:
            prompts = intent.generate_prompts(
                app, config.n_test, seed=derive_seed(config.seed, "test", app, batch)
            )
            for p in prompts:
                if p.text not in train_texts and len(test_samples) < config.n_test:
                    test_samples.append(intent.IntentSample(p, clean_oracle.translate(p)))
            batch += 1
            if batch > 50:
                raise ConfigError("grammar too small to produce a disjoint test split")
        demo[app], train[app], test[app] = demo_samples, train_set, test_samples
    return IntentBundle(
        oracle=clean_oracle,
        train_oracle=train_oracle,
        historical=historical,
        demo=demo,
        train=train,
        test=test,
    )


# ---------------------------------------------------------------------------
# translator market


def build_elam_market(
    students: dict[str, distill.StudentModel],
    p_min: float,
    fee_per_hidden: float = 6.25e-5,
) -> list[srl.ElamProfile]:
    """Two distilled students (fees proportional to width) plus a free
    even-vector stub."""
    market = []
    for idx, profile in enumerate(sorted(students)):
        model = students[profile]
        market.append(
            srl.student_elam(
                idx, f"student-{profile}", fee_per_hidden * model.hidden, model, p_min
            )
        )
    market.append(srl.even_stub_elam(len(market), 0.0))
    return market


# ---------------------------------------------------------------------------
# brute-force optimality oracle


def brute_force_optimum(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    preference: np.ndarray,
    fee_table: dict[int, float],
    arrival_rate: float,
    max_chains: int = 10**6,
) -> tuple[tuple[int, ...], int, float]:
    """Exhaustive maximum of the preference-weighted reward over all
    type-valid linked chains and translator choices.

    Returns (chain, elam_id, reward); ties resolve to the lexicographically
    smallest chain, then lowest translator id.
    """
    n_steps = len(template.required_types)
    by_type: dict[int, list[int]] = {}
    for agent in network.agents:
        by_type.setdefault(agent.service_type, []).append(agent.id)
    space = 1
    for t in template.required_types:
        space *= max(len(by_type.get(t, [])), 1)
    if space > max_chains:
        raise ConfigError(f"search space {space} exceeds the {max_chains} chain cap")

    best: tuple[tuple[int, ...], int, float] | None = None
    fees = sorted(fee_table.items())

    def extend(chain: list[int]):
        nonlocal best
        depth = len(chain)
        if depth == n_steps:
            gensfc = qoe.GenSFC(tuple(chain), arrival_rate)
            breakdown = qoe.evaluate_chain(network, gensfc, template)
            for elam_id, fee in fees:
                reward = qoe.subjective_episode_reward(
                    breakdown, preference, template.capability_threshold, fee
                )
                if best is None or reward > best[2]:
                    best = (tuple(chain), elam_id, reward)
            return
        for candidate in sorted(by_type.get(template.required_types[depth], [])):
            if candidate in chain:
                continue
            if chain and not network.has_link(chain[-1], candidate):
                continue
            chain.append(candidate)
            extend(chain)
            chain.pop()

    extend([])
    if best is None:
        raise ConfigError("no type-valid linked chain exists in this scenario")
    return best


# ---------------------------------------------------------------------------
# persistence


def write_csv(path, rows: list[dict], fieldnames: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(row.get(k)) for k in fieldnames})


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)  # full precision, reproducible
    return value


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def content_hash(obj) -> str:
    """Stable hash of any JSON-serializable object."""
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()


@dataclass
class RunRecord:
    name: str
    config: dict
    input_hash: str
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def save(self, out_dir, fieldnames: list[str]) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / f"{self.name}.csv", self.rows, fieldnames)
        with open(out_dir / f"{self.name}.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"config": self.config, "input_hash": self.input_hash, "summary": self.summary},
                fh,
                indent=2,
                sort_keys=True,
                default=str,
            )
            fh.write("\n")


# ---------------------------------------------------------------------------
# experiments


def benchmark_intent_config(seed: int = 0) -> IntentConfig:
    """Distillation-benchmark datasets: contamination-free training splits
    with a junk-label fraction, and clean-teacher test labels."""
    return IntentConfig(seed=seed, tau_min=0.45, outlier_rate=0.2)


def benchmark_distill_config(seed: int = 0, scale_factor: float = 1.8) -> distill.DistillConfig:
    """Two-phase training: supervised warm start (the reference is then a
    pretrained snapshot) and a short SGD preference phase where the
    per-sample temperature has its intended magnitude effect."""
    return distill.DistillConfig(
        beta_base=2.0,
        scale_factor=scale_factor,
        learning_rate=0.5,
        epochs=8,
        warmstart_epochs=20,
        warmstart_lr=3e-3,
        preference_optimizer="sgd",
        profile="small",
        seed=seed,
    )


def run_distill_arm(
    bundle: IntentBundle,
    app: int,
    config: distill.DistillConfig,
    train_size: int | None = None,
    vocab: distill.PreferenceVocab | None = None,
):
    """Train one student arm and evaluate it on the application test set."""
    train_set = bundle.train[app]
    if train_size is not None:
        train_set = train_set[:train_size]
    model, _, log_rows = distill.train_distill(
        train_set, config, vocab=vocab, eval_set=bundle.test[app]
    )
    p_min = config.resolved_p_min(len(model.vocab))
    metrics = distill.evaluate(model, bundle.test[app], p_min)
    return model, metrics, log_rows


def distill_benchmark(
    bundle: IntentBundle,
    seeds: list[int],
    sizes: list[int],
    base_config: distill.DistillConfig,
    vocab: distill.PreferenceVocab | None = None,
) -> list[dict]:
    """Weighted vs unweighted distillation plus the even baseline, across
    applications, seeds, and training-set sizes."""
    vocab = vocab or distill.PreferenceVocab()
    rows = []
    for app in sorted(bundle.train):
        even = distill.even_baseline_metrics(bundle.test[app])
        rows.append(
            {
                "app": app,
                "variant": "even",
                "seed": -1,
                "train_size": 0,
                "mae": even.mae,
                "mse": even.mse,
                "failure_rate": even.failure_rate,
            }
        )
        for seed in seeds:
            for variant, scale in (("weighted", base_config.scale_factor), ("unweighted", 0.0)):
                for size in sizes:
                    config = replace(base_config, scale_factor=scale, seed=derive_seed(seed, app, variant))
                    _, metrics, _ = run_distill_arm(bundle, app, config, train_size=size, vocab=vocab)
                    rows.append(
                        {
                            "app": app,
                            "variant": variant,
                            "seed": seed,
                            "train_size": size,
                            "mae": metrics.mae,
                            "mse": metrics.mse,
                            "failure_rate": metrics.failure_rate,
                        }
                    )
    return rows


def train_students(
    bundle: IntentBundle,
    app: int,
    config: distill.DistillConfig,
    vocab: distill.PreferenceVocab | None = None,
) -> dict[str, distill.StudentModel]:
    vocab = vocab or distill.PreferenceVocab()
    students = {}
    for profile in ("small", "large"):
        arm = replace(config, profile=profile, seed=derive_seed(config.seed, "student", profile))
        model, _, _ = run_distill_arm(bundle, app, arm, vocab=vocab)
        students[profile] = model
    return students


def srl_benchmark(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    bundle: IntentBundle,
    app: int,
    elams: list[srl.ElamProfile],
    seeds: list[int],
    episodes: int,
    base_config: srl.SrlConfig,
) -> dict[str, list[dict]]:
    """Policy training against the three reference strategies, per seed."""
    intents_app = bundle.test[app]  # held-out prompt stream
    logs: dict[str, list[dict]] = {"srl": [], "random": [], "greedy": [], "even": []}
    for seed in seeds:
        config = replace(base_config, seed=seed)
        _, rows = srl.train_srl(network, template, intents_app, elams, config, episodes)
        logs["srl"].extend(rows)
        logs["random"].extend(
            srl.baseline_random(network, template, intents_app, elams, config, episodes, seed)
        )
        logs["greedy"].extend(
            srl.baseline_greedy(network, template, intents_app, elams, config, episodes, seed)
        )
        _, even_rows = srl.baseline_even(network, template, intents_app, elams, config, episodes)
        logs["even"].extend(even_rows)
    return logs


def contaminated_stream(
    bundle: IntentBundle, main_app: int, other_app: int, fraction: float, seed: int
) -> list[intent.IntentSample]:
    """Prompt stream for one application with a fraction of cross-
    application outliers mixed in deterministically."""
    main = bundle.test[main_app]
    other = bundle.test[other_app]
    rng = np.random.default_rng(derive_seed(seed, "contamination"))
    stream = []
    for i, sample in enumerate(main):
        if rng.random() < fraction:
            stream.append(other[i % len(other)])
        else:
            stream.append(sample)
    return stream


def calibration_experiment(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    stream: list[intent.IntentSample],
    elams: list[srl.ElamProfile],
    seeds: list[int],
    episodes: int,
    base_config: srl.SrlConfig,
) -> list[dict]:
    """Calibrated vs uncalibrated training on a contaminated stream."""
    rows = []
    for seed in seeds:
        for calibrated in (True, False):
            config = replace(base_config, seed=seed, calibrate=calibrated)
            variant = "calibrated" if calibrated else "uncalibrated"
            _, log = srl.train_srl(
                network, template, stream, elams, config, episodes, variant=variant
            )
            rows.extend(log)
    return rows


def optimality_experiment(
    network: qoe.AgenticNetwork,
    template: qoe.RequestTemplate,
    bundle: IntentBundle,
    app: int,
    elams: list[srl.ElamProfile],
    seeds: list[int],
    episodes: int,
    base_config: srl.SrlConfig,
    n_users: int = 10,
) -> list[dict]:
    """Greedy-decoded policy reward against the exhaustive optimum.

    A chain violating the functional type order is a failed service, so it
    scores a zero ratio regardless of its raw reward.
    """
    from dataclasses import replace as _replace

    fee_table = {e.id: e.fee for e in elams}
    users = bundle.test[app][:n_users]
    rows = []
    for seed in seeds:
        config = _replace(base_config, seed=seed)
        runner, _ = srl.train_srl(network, template, bundle.test[app], elams, config, episodes)
        for idx, user in enumerate(users):
            chain, _, optimum = brute_force_optimum(
                network, template, user.preference, fee_table, config.arrival_rate
            )
            if optimum <= 0:
                raise ConfigError("optimality scenario must have a positive optimum")
            result = srl.greedy_chain(runner, user)
            ok = result.breakdown is not None and result.breakdown.feasible.succ
            ratio = result.reward_gt / optimum if ok else 0.0
            rows.append(
                {
                    "seed": seed,
                    "user": idx,
                    "policy_reward": result.reward_gt if ok else float("nan"),
                    "optimum": optimum,
                    "optimum_chain": "-".join(str(a) for a in chain),
                    "policy_chain": "-".join(str(a) for a in result.chain),
                    "ratio": ratio,
                }
            )
    return rows


def synthetic_users(
    bundle: IntentBundle, n_users: int, seed: int
) -> list[intent.IntentSample]:
    """Balanced user population drawn from the application grammars with
    teacher-labeled ground-truth preferences."""
    apps = sorted(bundle.train)
    users = []
    per_app = n_users // len(apps)
    for app in apps:
        prompts = intent.generate_prompts(app, per_app, seed=derive_seed(seed, "users", app))
        users.extend(_labeled(bundle.oracle, prompts))
    return users


# ---------------------------------------------------------------------------
# summaries


def export_summary(rows: list[dict], group_keys: list[str], value_keys: list[str]) -> list[dict]:
    """Mean and standard deviation of value columns over row groups."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, []).append(row)
    summary = []
    for key in sorted(groups, key=str):
        bucket = groups[key]
        entry = dict(zip(group_keys, key))
        entry["count"] = len(bucket)
        for value_key in value_keys:
            values = np.array([float(r[value_key]) for r in bucket])
            finite = values[np.isfinite(values)]
            entry[f"{value_key}_mean"] = float(finite.mean()) if finite.size else float("nan")
            entry[f"{value_key}_std"] = float(finite.std()) if finite.size else float("nan")
        summary.append(entry)
    return summary


def save_policy(runner: srl.SrlRunner, path, config_echo: dict | None = None) -> None:
    header = {
        "n_agents": runner.policy.n_agents,
        "n_elams": runner.policy.n_elams,
        "config": config_echo or asdict_config(runner.config),
    }
    np.savez(path, header=json.dumps(header, sort_keys=True, default=str), **runner.policy.params.params)


def asdict_config(config) -> dict:
    data = asdict(config)
    for key, value in data.items():
        if isinstance(value, np.ndarray):
            data[key] = value.tolist()
    return data
