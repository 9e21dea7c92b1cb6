"""Tests for intent generation, embeddings, and dataset construction."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gensfc import intent
from gensfc.errors import ConfigError


@pytest.fixture(scope="module")
def oracle():
    return intent.TeacherOracle(seed=0, noise_scale=0.05)


@pytest.fixture(scope="module")
def quiet_oracle():
    return intent.TeacherOracle(seed=0, noise_scale=0.0)


def samples_for(oracle, app, count, seed):
    prompts = intent.generate_prompts(app, count, seed=seed)
    return [intent.IntentSample(p, oracle.translate(p)) for p in prompts]


# ---------------------------------------------------------------------------
# simplex projection


def test_projection_identity_on_valid_vectors():
    v = np.array([0.42, 0.28, 0.13, 0.17])
    assert np.allclose(intent.project_preference(v), v, atol=1e-12)


def test_projection_floors_axis_vector():
    w = intent.project_preference(np.array([1.0, 0.0, 0.0, 0.0]))
    assert intent.is_valid_preference(w)
    assert w[1] == pytest.approx(1e-3)
    assert w[0] == pytest.approx(0.997)


def test_projection_handles_degenerate_input():
    w = intent.project_preference(np.zeros(4))
    assert np.allclose(w, 0.25)


@given(st.lists(st.floats(-2.0, 5.0), min_size=4, max_size=4))
@settings(max_examples=100, deadline=None)
def test_projection_always_valid(values):
    w = intent.project_preference(np.array(values))
    assert intent.is_valid_preference(w)
    # idempotent
    assert np.allclose(intent.project_preference(w), w, atol=1e-12)


# ---------------------------------------------------------------------------
# angular distance


def test_angular_distance_basic():
    a = np.array([1.0, 0.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0, 0.0])
    assert intent.angular_distance(a, a) == 0.0
    assert intent.angular_distance(a, b) == pytest.approx(0.5)
    c = np.array([0.5, 0.5, 0.0, 0.0])
    d = np.array([0.5, 0.0, 0.5, 0.0])
    assert intent.angular_distance(c, d) == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_angular_distance_scale_invariant_and_symmetric():
    a = np.array([0.4, 0.3, 0.2, 0.1])
    assert intent.angular_distance(a, 7.3 * a) == pytest.approx(0.0, abs=1e-7)
    b = np.array([0.1, 0.2, 0.3, 0.4])
    assert intent.angular_distance(a, b) == intent.angular_distance(b, a)


# ---------------------------------------------------------------------------
# embedding


def test_embed_deterministic_and_normalized():
    a = intent.embed("Write a thorough report")
    b = intent.embed("Write a thorough report")
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert intent.cosine_similarity(a, b) == pytest.approx(1.0)


def test_embed_empty_text_is_zero():
    z = intent.embed("!!! ...")
    assert np.all(z == 0.0)
    assert intent.cosine_similarity(z, intent.embed("hello")) == 0.0


def test_cosine_extremes():
    a = intent.embed("alpha beta gamma")
    assert intent.cosine_similarity(a, -a) == pytest.approx(-1.0)


def test_disjoint_token_prompts_have_low_cosine():
    # measured on the shipped grammar: max |cos| 0.135 over these pairs
    p1 = intent.generate_prompts(1, 40, seed=1)
    p2 = intent.generate_prompts(2, 40, seed=2)
    pairs = []
    for a in p1:
        ta = set(intent._tokenize(a.text))
        for b in p2:
            if not ta & set(intent._tokenize(b.text)):
                pairs.append((a, b))
            if len(pairs) >= 20:
                break
        if len(pairs) >= 20:
            break
    assert len(pairs) == 20
    for a, b in pairs:
        cos = intent.cosine_similarity(intent.embed(a.text), intent.embed(b.text))
        assert abs(cos) <= 0.2


# ---------------------------------------------------------------------------
# teacher oracle


def test_teacher_base_vector_without_keywords(quiet_oracle):
    prompt = intent.Prompt("plain request without any trigger words", application_id=1)
    out = quiet_oracle.translate(prompt)
    assert np.allclose(out, quiet_oracle.base_preference(1), atol=1e-12)


def test_teacher_shift_then_project(quiet_oracle):
    prompt = intent.Prompt("urgent", application_id=1)
    expected = intent.project_preference(
        quiet_oracle.base_preference(1) + np.array([0.0, 0.0, 0.2, 0.0])
    )
    assert np.allclose(quiet_oracle.translate(prompt), expected, atol=1e-15)


def test_teacher_deterministic(oracle):
    prompt = intent.Prompt("write a polished essay about congestion control", 1)
    assert np.array_equal(oracle.translate(prompt), oracle.translate(prompt))


def test_teacher_unknown_application(oracle):
    with pytest.raises(ConfigError):
        oracle.translate(intent.Prompt("hello", application_id=99))


def test_teacher_outputs_always_valid(oracle):
    for app in (1, 2):
        for sample in samples_for(oracle, app, 50, seed=app):
            assert intent.is_valid_preference(sample.preference)


# ---------------------------------------------------------------------------
# prompt generation


def test_generate_prompts_deterministic():
    a = intent.generate_prompts(1, 10, seed=42)
    b = intent.generate_prompts(1, 10, seed=42)
    assert [p.text for p in a] == [p.text for p in b]
    assert intent.generate_prompts(1, 0, seed=1) == []


def test_generate_prompts_quality_keyword_frequency():
    # measured 0.74 on the shipped grammar; contract is >= 0.5
    grammar = intent.default_grammar()
    quality = set(grammar["applications"]["1"]["slots"]["quality"])
    prompts = intent.generate_prompts(1, 200, seed=3)
    hits = sum(1 for p in prompts if set(intent._tokenize(p.text)) & quality)
    assert hits / len(prompts) >= 0.5


# ---------------------------------------------------------------------------
# relevance filtering


def test_filter_relevant_bounds(oracle):
    historical = samples_for(oracle, 1, 20, seed=5) + samples_for(oracle, 2, 20, seed=6)
    user = samples_for(oracle, 1, 5, seed=7)
    assert intent.filter_relevant(historical, user, -1.0) == historical
    assert intent.filter_relevant(historical, user, 1.0 - 1e-12) == []


def test_filter_relevant_keeps_identical_prompt(oracle):
    user = samples_for(oracle, 1, 3, seed=8)
    twin = intent.IntentSample(
        intent.Prompt(user[0].prompt.text, 1), oracle.translate(user[0].prompt)
    )
    historical = samples_for(oracle, 2, 10, seed=9) + [twin]
    kept = intent.filter_relevant(historical, user, 1.0)
    assert twin in kept


def test_filter_relevant_monotone_in_threshold(oracle):
    historical = samples_for(oracle, 1, 30, seed=10) + samples_for(oracle, 2, 30, seed=11)
    user = samples_for(oracle, 1, 5, seed=12)
    sizes = [
        len(intent.filter_relevant(historical, user, tau)) for tau in (-1.0, 0.0, 0.3, 0.6, 0.9)
    ]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


# ---------------------------------------------------------------------------
# contrastive selection


def test_topk_entire_pool_sorted():
    ref = np.array([0.97, 0.01, 0.01, 0.01])
    pool = [
        np.array([0.01, 0.97, 0.01, 0.01]),
        np.array([0.49, 0.49, 0.01, 0.01]),
        ref.copy(),
    ]
    out = intent.topk_contrastive(ref, pool, k=3)
    dists = [intent.angular_distance(ref, p) for p in out]
    assert dists == sorted(dists, reverse=True)
    assert np.array_equal(out[-1], ref)  # identical entry ranked last


def test_topk_picks_most_distant():
    ref = np.array([0.97, 0.01, 0.01, 0.01])
    orthogonal = np.array([0.01, 0.01, 0.97, 0.01])
    out = intent.topk_contrastive(ref, [ref.copy(), orthogonal], k=1)
    assert np.array_equal(out[0], orthogonal)


def test_topk_size_error():
    with pytest.raises(ValueError):
        intent.topk_contrastive(np.full(4, 0.25), [np.full(4, 0.25)], k=2)


# ---------------------------------------------------------------------------
# augmentation and dataset build


def test_augment_sizes(oracle):
    demo = samples_for(oracle, 1, 10, seed=13)
    assert intent.augment(demo, 0, oracle, seed=14) == demo
    out = intent.augment(demo, 25, oracle, seed=14)
    assert len(out) == 35
    assert out[:10] == demo


def test_augment_mean_stays_close(oracle):
    # measured angular distance 0.009 at noise 0.05; contract is <= 0.1
    demo = samples_for(oracle, 1, 10, seed=4)
    out = intent.augment(demo, 50, oracle, seed=5)
    synthetic = out[len(demo):]
    dist = intent.angular_distance(
        intent.mean_preference(demo), intent.mean_preference(synthetic)
    )
    assert dist <= 0.1


def test_build_iokd_dataset_reproducible(oracle):
    demo = samples_for(oracle, 1, 10, seed=4)
    historical = samples_for(oracle, 1, 30, seed=15) + samples_for(oracle, 2, 30, seed=16)
    a = intent.build_iokd_dataset(demo, historical, n_aug=20, k=4, oracle=oracle, seed=17)
    b = intent.build_iokd_dataset(demo, historical, n_aug=20, k=4, oracle=oracle, seed=17)
    assert len(a) == len(b) == 30
    for x, y in zip(a, b):
        assert x.prompt.text == y.prompt.text
        assert np.array_equal(x.preference, y.preference)
        assert all(np.array_equal(p, q) for p, q in zip(x.contrastive, y.contrastive))
    # contrastive entries are distinct from the positive
    for sample in a:
        for c in sample.contrastive:
            assert intent.angular_distance(sample.preference, c) > 0.0


def test_build_iokd_dataset_degenerate_pool_errors(oracle):
    demo = samples_for(oracle, 1, 1, seed=18)
    identical = [intent.IntentSample(demo[0].prompt, demo[0].preference.copy())]
    with pytest.raises(ValueError):
        intent.build_iokd_dataset(demo, identical, n_aug=0, k=1, oracle=oracle, seed=19)


# ---------------------------------------------------------------------------
# mean preference


def test_mean_preference_single_and_midpoint():
    a = intent.IntentSample(intent.Prompt("a", 1), np.array([0.4, 0.3, 0.2, 0.1]))
    b = intent.IntentSample(intent.Prompt("b", 1), np.array([0.2, 0.3, 0.4, 0.1]))
    assert np.allclose(intent.mean_preference([a]), a.preference, atol=1e-12)
    assert np.allclose(intent.mean_preference([a, b]), [0.3, 0.3, 0.3, 0.1], atol=1e-12)


def test_mean_preference_pinned_dataset(oracle):
    demo = samples_for(oracle, 1, 10, seed=4)
    historical = samples_for(oracle, 1, 150, seed=10) + samples_for(oracle, 2, 150, seed=11)
    dataset = intent.build_iokd_dataset(demo, historical, n_aug=490, k=4, oracle=oracle, seed=6)
    mean = intent.mean_preference(dataset)
    assert np.allclose(
        mean, [0.442129919766, 0.28533798944, 0.118613401183, 0.153918689611], atol=1e-9
    )


# ---------------------------------------------------------------------------
# dataset files


def test_dataset_roundtrip(tmp_path, oracle):
    demo = samples_for(oracle, 1, 5, seed=20)
    historical = samples_for(oracle, 2, 10, seed=21)
    dataset = intent.build_iokd_dataset(demo, historical, n_aug=5, k=3, oracle=oracle, seed=22)
    path = tmp_path / "dataset.jsonl"
    intent.save_dataset(dataset, path)
    loaded = intent.load_dataset(path)
    assert len(loaded) == len(dataset)
    for x, y in zip(dataset, loaded):
        assert x.prompt.text == y.prompt.text
        assert x.prompt.application_id == y.prompt.application_id
        assert np.allclose(x.preference, y.preference)
        assert all(np.allclose(p, q) for p, q in zip(x.contrastive, y.contrastive))
