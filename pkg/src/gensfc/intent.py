"""Synthetic user intents and the preference-dataset construction pipeline.

A user intent is a natural-language prompt whose latent meaning is a
4-weight preference vector over [capability, information-loss, latency,
outage].  A deterministic teacher oracle plays the role of a large
intent-labeling model: it owns per-application base preferences plus a
keyword-shift table, and labels any prompt reproducibly.  Prompts are
produced from a small template grammar shipped as package data.

Text is embedded by signed feature hashing (unigrams and bigrams into 256
buckets, L2-normalized), which keeps cosine similarity meaningful without
any learned encoder and is stable across platforms.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError
from .seeding import derive_seed

PREFERENCE_DIM = 4
PREFERENCE_FLOOR = 1e-3
EMBED_DIM = 256

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SLOT_RE = re.compile(r"\{(\w+)\}")


# ---------------------------------------------------------------------------
# preference vectors


def project_preference(values, floor: float = PREFERENCE_FLOOR) -> np.ndarray:
    """Project onto the floored probability simplex.

    Pattern: subtract the floor, clip negatives, renormalize the remaining
    mass to 1 - 4*floor, re-add the floor.  Vectors already satisfying the
    constraints pass through unchanged, so the projection is idempotent.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (PREFERENCE_DIM,):
        raise ValueError(f"preference vector must have shape ({PREFERENCE_DIM},)")
    spare = np.clip(v - floor, 0.0, None)
    total = spare.sum()
    if total <= 0.0:
        return np.full(PREFERENCE_DIM, 1.0 / PREFERENCE_DIM)
    return floor + spare * ((1.0 - PREFERENCE_DIM * floor) / total)


def is_valid_preference(values, floor: float = PREFERENCE_FLOOR, tol: float = 1e-9) -> bool:
    v = np.asarray(values, dtype=np.float64)
    return (
        v.shape == (PREFERENCE_DIM,)
        and bool(np.all(v >= floor - tol))
        and abs(float(v.sum()) - 1.0) <= tol
    )


def angular_distance(a, b) -> float:
    """Angle between two vectors, normalized to [0, 1]; non-negative
    vectors stay within [0, 0.5]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    cos = float(np.dot(a, b) / (na * nb))
    return math.acos(min(1.0, max(-1.0, cos))) / math.pi


# ---------------------------------------------------------------------------
# text embedding


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _stable_hash(token: str) -> int:
    import hashlib

    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


_embed_cache: dict[tuple[int, str], np.ndarray] = {}


def embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Signed feature-hash embedding of a text; unit L2 norm, or the zero
    vector when the text has no tokens.  Deterministic across runs."""
    cached = _embed_cache.get((dim, text))
    if cached is not None:
        return cached
    tokens = _tokenize(text)
    vec = np.zeros(dim)
    features = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    for feature in features:
        h = _stable_hash(feature)
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    vec.flags.writeable = False
    _embed_cache[(dim, text)] = vec
    return vec


def cosine_similarity(a, b) -> float:
    """Cosine of two embeddings; 0 by convention when either is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class Prompt:
    text: str
    application_id: int
    annotation: str | None = None  # optional free-text rationale, no contract

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be non-empty")


@dataclass(frozen=True)
class IntentSample:
    prompt: Prompt
    preference: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "preference", np.asarray(self.preference, dtype=np.float64))


@dataclass(frozen=True)
class IoKDSample:
    prompt: Prompt
    preference: np.ndarray
    contrastive: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "preference", np.asarray(self.preference, dtype=np.float64))
        object.__setattr__(
            self, "contrastive", tuple(np.asarray(c, dtype=np.float64) for c in self.contrastive)
        )


# ---------------------------------------------------------------------------
# grammar and teacher


def default_grammar() -> dict:
    with resources.files("gensfc.data").joinpath("grammar.json").open(encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class TeacherOracle:
    """Deterministic stand-in for a large intent-labeling model.

    Maps a prompt to a preference vector: application base, plus the
    summed shifts of keywords present in the text, plus a Dirichlet blend
    of configurable scale, projected to the floored simplex.  With a
    nonzero ``outlier_rate`` a fraction of prompts instead receive a
    heavily blended (junk) label, modeling occasional gross annotation
    errors in synthesized data.  The label is a pure function of
    (oracle seed, prompt text).
    """

    grammar: dict = field(default_factory=default_grammar)
    noise_scale: float = 0.05
    outlier_rate: float = 0.0
    outlier_blend: float = 0.6
    seed: int = 0

    def __post_init__(self):
        self._bases = {
            int(app_id): np.asarray(cfg["base_preference"], dtype=np.float64)
            for app_id, cfg in self.grammar["applications"].items()
        }
        self._shifts = {
            kw: np.asarray(shift, dtype=np.float64)
            for kw, shift in self.grammar["keyword_shifts"].items()
        }

    def applications(self) -> list[int]:
        return sorted(self._bases)

    def base_preference(self, application_id: int) -> np.ndarray:
        try:
            return self._bases[application_id].copy()
        except KeyError:
            raise ConfigError(f"unknown application id {application_id}") from None

    def translate(self, prompt: Prompt) -> np.ndarray:
        raw = self.base_preference(prompt.application_id)
        tokens = set(_tokenize(prompt.text))
        for keyword, shift in self._shifts.items():
            if keyword in tokens:
                raw = raw + shift
        if self.noise_scale > 0.0 or self.outlier_rate > 0.0:
            rng = np.random.default_rng(derive_seed(self.seed, "translate", prompt.text))
            scale = self.noise_scale
            if self.outlier_rate > 0.0 and rng.random() < self.outlier_rate:
                scale = self.outlier_blend
            noise = rng.dirichlet(np.ones(PREFERENCE_DIM))
            raw = (1.0 - scale) * raw + scale * noise
        return project_preference(raw)


def teacher_translate(oracle: TeacherOracle, prompt: Prompt) -> np.ndarray:
    return oracle.translate(prompt)


def generate_prompts(
    application_id: int, count: int, seed: int, grammar: dict | None = None
) -> list[Prompt]:
    """Sample prompts from the application's template grammar."""
    grammar = grammar or default_grammar()
    try:
        app = grammar["applications"][str(application_id)]
    except KeyError:
        raise ConfigError(f"unknown application id {application_id}") from None
    rng = np.random.default_rng(derive_seed(seed, "prompts", application_id))
    templates = app["templates"]
    slots = app["slots"]
    prompts = []
    for _ in range(count):
        template = templates[int(rng.integers(len(templates)))]

        def fill(match):
            pool = slots[match.group(1)]
            return pool[int(rng.integers(len(pool)))]

        prompts.append(Prompt(text=_SLOT_RE.sub(fill, template), application_id=application_id))
    return prompts


# ---------------------------------------------------------------------------
# dataset construction


def filter_relevant(
    historical: list[IntentSample], user: list[IntentSample], tau_min: float
) -> list[IntentSample]:
    """Historical samples whose best cosine similarity to any user prompt
    reaches tau_min; input order is preserved."""
    if not -1.0 <= tau_min <= 1.0:
        raise ValueError("tau_min must be in [-1, 1]")
    user_vecs = [embed(u.prompt.text) for u in user]
    kept = []
    for sample in historical:
        vec = embed(sample.prompt.text)
        best = max((cosine_similarity(vec, uv) for uv in user_vecs), default=-math.inf)
        if best >= tau_min:
            kept.append(sample)
    return kept


def topk_contrastive(sample_pref, pool: list, k: int) -> list[np.ndarray]:
    """The k pool vectors most angularly distant from the sample's
    preference, ties broken by pool index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pool) < k:
        raise ValueError(f"pool of {len(pool)} vectors cannot supply top-{k}")
    distances = [angular_distance(sample_pref, p) for p in pool]
    order = sorted(range(len(pool)), key=lambda i: (-distances[i], i))
    return [np.asarray(pool[i], dtype=np.float64) for i in order[:k]]


def _restricted_grammar(grammar: dict, application_id: int, demo_tokens: set[str]) -> dict:
    """Grammar limited to slot values already seen in the demo prompts;
    templates needing an unseen slot are dropped, with a full-grammar
    fallback when nothing survives."""
    app = grammar["applications"][str(application_id)]
    slots = {}
    for name, pool in app["slots"].items():
        kept = [v for v in pool if set(_tokenize(v)) <= demo_tokens]
        slots[name] = kept
    templates = []
    for template in app["templates"]:
        needed = _SLOT_RE.findall(template)
        if all(slots.get(n) for n in needed):
            templates.append(template)
    if not templates:
        return grammar
    restricted = json.loads(json.dumps(grammar))
    restricted["applications"][str(application_id)]["templates"] = templates
    restricted["applications"][str(application_id)]["slots"] = {
        name: (pool if pool else app["slots"][name]) for name, pool in slots.items()
    }
    return restricted


def augment(
    demo: list[IntentSample], n_aug: int, oracle: TeacherOracle, seed: int
) -> list[IntentSample]:
    """Extend a demo set with n_aug teacher-labeled synthetic samples drawn
    from the grammar restricted to keywords the demo set exhibits."""
    if not demo:
        raise ValueError("demo set must be non-empty")
    demo_tokens = set()
    for sample in demo:
        demo_tokens |= set(_tokenize(sample.prompt.text))
    app_ids = [s.prompt.application_id for s in demo]
    apps = sorted(set(app_ids))
    weights = np.array([app_ids.count(a) for a in apps], dtype=np.float64)
    weights /= weights.sum()
    restricted = {a: _restricted_grammar(oracle.grammar, a, demo_tokens) for a in apps}
    rng = np.random.default_rng(derive_seed(seed, "augment"))
    synthetic = []
    for i in range(n_aug):
        app = apps[int(rng.choice(len(apps), p=weights))]
        prompt = generate_prompts(app, 1, seed=derive_seed(seed, "augment-prompt", i), grammar=restricted[app])[0]
        synthetic.append(IntentSample(prompt=prompt, preference=oracle.translate(prompt)))
    return list(demo) + synthetic


def build_iokd_dataset(
    demo: list[IntentSample],
    historical: list[IntentSample],
    n_aug: int,
    k: int,
    oracle: TeacherOracle,
    seed: int,
) -> list[IoKDSample]:
    """Augment the demo set, then attach per-sample top-k contrastive
    preference vectors drawn from the historical pool.

    Pool vectors identical (angular distance 0) to the positive are
    skipped, since a zero-margin pair carries no preference signal; a
    ValueError is raised when fewer than k distinct vectors remain.
    """
    samples = augment(demo, n_aug, oracle, seed)
    pool = [h.preference for h in historical]
    dataset = []
    for sample in samples:
        candidates = [p for p in pool if angular_distance(sample.preference, p) > 0.0]
        if len(candidates) < k:
            raise ValueError(
                f"historical pool supplies only {len(candidates)} distinct "
                f"contrastive vectors, need {k}"
            )
        contrastive = topk_contrastive(sample.preference, candidates, k)
        dataset.append(
            IoKDSample(
                prompt=sample.prompt,
                preference=sample.preference,
                contrastive=tuple(contrastive),
            )
        )
    return dataset


def mean_preference(samples: list) -> np.ndarray:
    """Arithmetic mean of sample preferences, re-projected to the simplex."""
    if not samples:
        raise ValueError("samples must be non-empty")
    stack = np.stack([np.asarray(s.preference, dtype=np.float64) for s in samples])
    return project_preference(stack.mean(axis=0))


# ---------------------------------------------------------------------------
# dataset files (line-delimited JSON)


def save_dataset(samples: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            contrastive = getattr(sample, "contrastive", ())
            record = {
                "text": sample.prompt.text,
                "application_id": sample.prompt.application_id,
                "preference": [float(x) for x in sample.preference],
                "contrastive": [[float(x) for x in c] for c in contrastive],
                "annotation": sample.prompt.annotation,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path) -> list[IoKDSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            prompt = Prompt(
                text=record["text"],
                application_id=int(record["application_id"]),
                annotation=record.get("annotation"),
            )
            samples.append(
                IoKDSample(
                    prompt=prompt,
                    preference=np.asarray(record["preference"], dtype=np.float64),
                    contrastive=tuple(
                        np.asarray(c, dtype=np.float64) for c in record.get("contrastive", [])
                    ),
                )
            )
    return samples
