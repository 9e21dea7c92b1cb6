"""Preference distillation: student translators trained on pairwise choices.

The student maps a prompt embedding to a distribution over a quantized
simplex vocabulary of preference vectors, which makes the pairwise
(Bradley-Terry) distillation loss exactly computable without a generative
decoder.  The loss compares the student's implicit reward of the positive
preference against each contrastive one, relative to a frozen reference
snapshot, with a per-sample temperature that shrinks for samples far from
the dataset's average preference (outlier damping).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import TrainingError
from .intent import (
    EMBED_DIM,
    PREFERENCE_FLOOR,
    angular_distance,
    embed,
    mean_preference,
    project_preference,
)
from .seeding import derive_seed

PROFILES = {"small": 32, "large": 128}


class PreferenceVocab:
    """All preference vectors on a step-quantized simplex grid.

    Grid points (coordinates are multiples of ``step`` summing to 1, zeros
    allowed) are enumerated in lexicographic order and floor-projected, so
    every entry is a valid preference vector and indexing is stable.
    """

    def __init__(self, step: float = 0.05, floor: float = PREFERENCE_FLOOR):
        self.step = step
        self.floor = floor
        units = round(1.0 / step)
        if abs(units * step - 1.0) > 1e-9:
            raise ValueError("step must divide 1 evenly")
        grid = []
        for i in range(units + 1):
            for j in range(units + 1 - i):
                for k in range(units + 1 - i - j):
                    grid.append((i, j, k, units - i - j - k))
        raw = np.array(grid, dtype=np.float64) * step
        self.entries = np.stack([project_preference(row, floor) for row in raw])
        self.entries.flags.writeable = False

    def __len__(self) -> int:
        return self.entries.shape[0]

    def entry(self, index: int) -> np.ndarray:
        return self.entries[index]

    def snap(self, preference) -> int:
        """Index of the nearest entry by Euclidean distance, ties to the
        lowest index."""
        diff = self.entries - np.asarray(preference, dtype=np.float64)
        return int(np.argmin((diff * diff).sum(axis=1)))


def snap_to_vocab(vocab: PreferenceVocab, preference) -> int:
    return vocab.snap(preference)


@dataclass
class DistillConfig:
    beta_base: float = 1.0
    scale_factor: float = 1.5  # temperature shrink per unit angular distance
    learning_rate: float = 1e-3
    epochs: int = 40
    batch_size: int = 32
    p_min: float | None = None  # default: twice the uniform probability
    profile: str = "small"
    warmstart_epochs: int = 0  # supervised epochs before the reference freeze
    warmstart_size: int | None = None  # cap on samples for the warm start
    warmstart_lr: float | None = None  # defaults to learning_rate
    preference_optimizer: str = "adam"  # or "sgd" for the pairwise phase
    seed: int = 0

    def __post_init__(self):
        if self.beta_base <= 0:
            raise ValueError("beta_base must be positive")
        if not 0.0 <= self.scale_factor <= 2.0:
            raise ValueError("scale_factor must be in [0, 2]")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {sorted(PROFILES)}")
        if self.preference_optimizer not in ("adam", "sgd"):
            raise ValueError("preference_optimizer must be 'adam' or 'sgd'")

    def resolved_p_min(self, vocab_size: int) -> float:
        return 2.0 / vocab_size if self.p_min is None else self.p_min


@dataclass(frozen=True)
class DistillMetrics:
    mae: float
    mse: float
    failure_rate: float

    def __post_init__(self):
        if self.mae < 0 or self.mse < 0 or not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("metrics must be non-negative")


class StudentModel:
    """Two-layer translator: embedding -> hidden ReLU -> vocabulary logits."""

    def __init__(
        self,
        vocab: PreferenceVocab,
        profile: str = "small",
        embed_dim: int = EMBED_DIM,
        seed: int = 0,
    ):
        self.vocab = vocab
        self.profile = profile
        self.embed_dim = embed_dim
        self.hidden = PROFILES[profile]
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "student-init", profile))
        self.params = nn.ParamBundle(
            params={
                "enc_w": nn.xavier_uniform((embed_dim, self.hidden), rng),
                "enc_b": np.zeros(self.hidden),
                "head_w": nn.xavier_uniform((self.hidden, len(vocab)), rng),
                "head_b": np.zeros(len(vocab)),
            }
        )

    def clone_reference(self) -> dict[str, np.ndarray]:
        """Frozen parameter snapshot used as the distillation reference."""
        return {k: v.copy() for k, v in self.params.params.items()}

    def forward(self, x: np.ndarray, params: dict[str, np.ndarray] | None = None):
        p = params if params is not None else self.params.params
        pre, enc_cache = nn.dense_forward(x, p["enc_w"], p["enc_b"])
        hidden = nn.relu(pre)
        logits, head_cache = nn.dense_forward(hidden, p["head_w"], p["head_b"])
        return logits, (enc_cache, pre, hidden, head_cache)

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        enc_cache, pre, hidden, head_cache = cache
        d_head_w, d_head_b, d_hidden = nn.dense_backward(head_cache, dlogits)
        d_pre = nn.relu_backward(pre, d_hidden)
        d_enc_w, d_enc_b, _ = nn.dense_backward(enc_cache, d_pre)
        return {"enc_w": d_enc_w, "enc_b": d_enc_b, "head_w": d_head_w, "head_b": d_head_b}

    def log_probs(self, x: np.ndarray, params: dict[str, np.ndarray] | None = None):
        logits, cache = self.forward(x, params)
        return nn.log_softmax(logits), cache


def policy_logprob(model: StudentModel, prompt_text: str, preference) -> float:
    """Log-probability the student assigns to a preference vector (snapped
    to the vocabulary) given a prompt."""
    log_probs, _ = model.log_probs(embed(prompt_text)[None, :])
    return float(log_probs[0, model.vocab.snap(preference)])


def dynamic_beta(s_p, s_bar, beta_base: float, scale_factor: float) -> float:
    """Per-sample temperature, shrinking with angular distance from the
    dataset mean and clamped at 5% of the base."""
    value = beta_base * (1.0 - scale_factor * angular_distance(s_p, s_bar))
    return max(value, 0.05 * beta_base)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class PairCache:
    """Snapped indices, temperatures, and frozen reference log-probs for a
    dataset; computing these once removes the per-batch bottleneck."""

    embeddings: np.ndarray  # (n, d)
    pos_idx: np.ndarray  # (n,)
    con_idx: list[np.ndarray]  # per sample, variable length
    betas: np.ndarray  # (n,)
    ref_log_probs: np.ndarray  # (n, |vocab|)


def build_pair_cache(
    model: StudentModel,
    reference: dict[str, np.ndarray],
    dataset: list,
    s_bar: np.ndarray,
    config: DistillConfig,
) -> PairCache:
    vocab = model.vocab
    embeddings = np.stack([embed(s.prompt.text) for s in dataset])
    pos_idx = np.array([vocab.snap(s.preference) for s in dataset])
    con_idx = []
    for sample in dataset:
        if not sample.contrastive:
            raise ValueError("every sample needs at least one contrastive entry")
        con_idx.append(np.array([vocab.snap(c) for c in sample.contrastive]))
    betas = np.array(
        [
            dynamic_beta(s.preference, s_bar, config.beta_base, config.scale_factor)
            for s in dataset
        ]
    )
    ref_log_probs, _ = model.log_probs(embeddings, params=reference)
    return PairCache(
        embeddings=embeddings,
        pos_idx=pos_idx,
        con_idx=con_idx,
        betas=betas,
        ref_log_probs=ref_log_probs,
    )


def _cache_slice(cache: PairCache, indices: np.ndarray) -> PairCache:
    return PairCache(
        embeddings=cache.embeddings[indices],
        pos_idx=cache.pos_idx[indices],
        con_idx=[cache.con_idx[i] for i in indices],
        betas=cache.betas[indices],
        ref_log_probs=cache.ref_log_probs[indices],
    )


def iokd_loss(
    model: StudentModel,
    reference: dict[str, np.ndarray],
    batch: list,
    s_bar: np.ndarray,
    config: DistillConfig,
    embeddings: np.ndarray | None = None,
    cache: PairCache | None = None,
):
    """Weighted pairwise distillation loss over a batch with gradients.

    Per (sample, contrastive) pair the margin is the implicit-reward gap
    beta * [(log pi(s_p) - log ref(s_p)) - (log pi(s_c) - log ref(s_c))]
    and the loss is the mean of -log sigmoid(margin).  Pairs whose positive
    and contrastive vectors snap to the same vocabulary entry carry no
    signal and are skipped (counted in the stats).

    A PairCache (snapped indices plus frozen reference log-probs) can be
    supplied to skip the per-call preprocessing; the math is identical.

    Returns (loss, grads, stats); stats holds margins, mean_beta, skipped.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if cache is None:
        if embeddings is not None:
            cache = build_pair_cache(model, reference, batch, s_bar, config)
            cache.embeddings = embeddings
        else:
            cache = build_pair_cache(model, reference, batch, s_bar, config)
    log_theta, fwd_cache = model.log_probs(cache.embeddings)
    log_ref = cache.ref_log_probs

    counts = np.array([len(c) for c in cache.con_idx])
    rows_a = np.repeat(np.arange(len(batch)), counts)
    con_a = np.concatenate(cache.con_idx)
    pos_a = cache.pos_idx[rows_a]
    beta_a = cache.betas[rows_a]
    keep = con_a != pos_a
    skipped = int((~keep).sum())
    rows_a, con_a, pos_a, beta_a = rows_a[keep], con_a[keep], pos_a[keep], beta_a[keep]
    if rows_a.size == 0:
        raise ValueError("no usable pairs in batch (all contrastives collide)")

    gap = (log_theta - log_ref)[rows_a, pos_a] - (log_theta - log_ref)[rows_a, con_a]
    margins = beta_a * gap
    loss = float(np.mean(np.logaddexp(0.0, -margins)))

    # d loss / d margin = -(1 - sigmoid(margin)) / n_pairs
    g = -(1.0 - _sigmoid(margins)) / margins.size
    upstream = np.zeros_like(log_theta)
    np.add.at(upstream, (rows_a, pos_a), g * beta_a)
    np.add.at(upstream, (rows_a, con_a), -g * beta_a)
    dlogits = nn.log_softmax_backward(log_theta, upstream)
    grads = model.backward(fwd_cache, dlogits)
    stats = {
        "margins": margins,
        "mean_beta": float(np.mean(cache.betas)),
        "skipped": skipped,
    }
    return loss, grads, stats


def predict(
    model: StudentModel, prompt_text: str, p_min: float = 0.0
) -> np.ndarray | None:
    """Most likely vocabulary entry, or None when the student's confidence
    is below p_min (a translation failure)."""
    log_probs, _ = model.log_probs(embed(prompt_text)[None, :])
    best = int(np.argmax(log_probs[0]))
    if np.exp(log_probs[0, best]) < p_min:
        return None
    return model.vocab.entry(best)


def evaluate(
    model: StudentModel,
    test_set: list,
    p_min: float = 0.0,
    embeddings: np.ndarray | None = None,
) -> DistillMetrics:
    """MAE/MSE over the 4 preference components of non-failed predictions,
    plus the failure rate."""
    if not test_set:
        raise ValueError("test set must be non-empty")
    if embeddings is None:
        embeddings = np.stack([embed(s.prompt.text) for s in test_set])
    log_probs, _ = model.log_probs(embeddings)
    best = np.argmax(log_probs, axis=1)
    confident = np.exp(log_probs[np.arange(len(test_set)), best]) >= p_min
    failures = int((~confident).sum())
    if failures == len(test_set):
        return DistillMetrics(mae=float("inf"), mse=float("inf"), failure_rate=1.0)
    preds = model.vocab.entries[best[confident]]
    truth = np.stack([s.preference for s in test_set])[confident]
    diffs = preds - truth
    return DistillMetrics(
        mae=float(np.abs(diffs).mean()),
        mse=float((diffs * diffs).mean()),
        failure_rate=failures / len(test_set),
    )


def even_baseline_metrics(test_set: list) -> DistillMetrics:
    """Metrics of the constant even-preference predictor."""
    if not test_set:
        raise ValueError("test set must be non-empty")
    even = np.full(4, 0.25)
    diffs = np.stack([even - s.preference for s in test_set])
    return DistillMetrics(
        mae=float(np.abs(diffs).mean()),
        mse=float((diffs * diffs).mean()),
        failure_rate=0.0,
    )


def train_distill(
    dataset: list,
    config: DistillConfig,
    vocab: PreferenceVocab | None = None,
    eval_set: list | None = None,
):
    """Train a student on an IoKD dataset.

    The dataset mean preference is computed once up front (it parameterizes
    the per-sample temperature), the reference is frozen as a snapshot of
    the initialization (optionally after a supervised warm start), and the
    student then runs shuffled minibatch Adam on the pairwise loss.
    Returns (model, reference, log_rows); deterministic given the config
    seed.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    vocab = vocab or PreferenceVocab()
    model = StudentModel(vocab, profile=config.profile, seed=config.seed)
    embeddings = np.stack([embed(s.prompt.text) for s in dataset])
    targets = np.array([vocab.snap(s.preference) for s in dataset])
    p_min = config.resolved_p_min(len(vocab))

    if config.warmstart_epochs > 0:
        warm_lr = config.warmstart_lr if config.warmstart_lr is not None else config.learning_rate
        warm_rng = np.random.default_rng(derive_seed(config.seed, "warmstart"))
        n_warm = len(dataset)
        if config.warmstart_size is not None:
            n_warm = min(config.warmstart_size, n_warm)
        for _ in range(config.warmstart_epochs):
            order = warm_rng.permutation(n_warm)
            for start in range(0, n_warm, config.batch_size):
                idx = order[start : start + config.batch_size]
                logits, cache = model.forward(embeddings[idx])
                _, dlogits = nn.softmax_xent(logits, targets[idx])
                model.params.adam_step(model.backward(cache, dlogits), warm_lr)

    reference = model.clone_reference()
    s_bar = mean_preference(dataset)
    pair_cache = build_pair_cache(model, reference, dataset, s_bar, config)
    rng = np.random.default_rng(derive_seed(config.seed, "distill"))
    log_rows = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses, epoch_betas = [], []
        for start in range(0, len(dataset), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [dataset[i] for i in idx]
            loss, grads, stats = iokd_loss(
                model, reference, batch, s_bar, config, cache=_cache_slice(pair_cache, idx)
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            if config.preference_optimizer == "sgd":
                # plain SGD respects the per-sample temperature scaling;
                # Adam's per-coordinate normalization would cancel it
                for name, grad in grads.items():
                    model.params.params[name] -= config.learning_rate * grad
            else:
                model.params.adam_step(grads, config.learning_rate)
            epoch_losses.append(loss)
            epoch_betas.append(stats["mean_beta"])
        metrics = evaluate(model, dataset, p_min, embeddings=embeddings)
        log_rows.append(
            {
                "epoch": epoch,
                "split": "train",
                "loss": float(np.mean(epoch_losses)),
                "mae": metrics.mae,
                "mse": metrics.mse,
                "failure_rate": metrics.failure_rate,
                "mean_beta": float(np.mean(epoch_betas)),
            }
        )
        if eval_set:
            test_metrics = evaluate(model, eval_set, p_min)
            log_rows.append(
                {
                    "epoch": epoch,
                    "split": "test",
                    "loss": float("nan"),
                    "mae": test_metrics.mae,
                    "mse": test_metrics.mse,
                    "failure_rate": test_metrics.failure_rate,
                    "mean_beta": float(np.mean(epoch_betas)),
                }
            )
    return model, reference, log_rows


# ---------------------------------------------------------------------------
# checkpoints


def save_student(model: StudentModel, path) -> None:
    header = {
        "embed_dim": model.embed_dim,
        "hidden": model.hidden,
        "vocab_size": len(model.vocab),
        "vocab_step": model.vocab.step,
        "profile": model.profile,
        "seed": model.seed,
    }
    np.savez(
        path,
        header=json.dumps(header, sort_keys=True),
        **model.params.params,
    )


def load_student(path, vocab: PreferenceVocab | None = None) -> StudentModel:
    data = np.load(path, allow_pickle=False)
    header = json.loads(str(data["header"]))
    vocab = vocab or PreferenceVocab(step=header["vocab_step"])
    if len(vocab) != header["vocab_size"]:
        raise ValueError("vocabulary does not match checkpoint")
    model = StudentModel(
        vocab, profile=header["profile"], embed_dim=header["embed_dim"], seed=header["seed"]
    )
    for name in model.params.params:
        model.params.params[name][...] = data[name]
    return model
