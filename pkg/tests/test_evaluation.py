import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import small_config
from dsmap.evaluation import (
    ActivationStats,
    PrecomputedFeatures,
    RandomConvFeatures,
    SmallSampleWarning,
    activation_stats,
    diversity_pairs,
    diversity_score,
    extract,
    feature_distance,
    fid_protocol,
    frechet_distance,
    real_baseline_fid,
)
from dsmap.model import DSMAP


def test_activation_stats_cases():
    s = activation_stats([[1.0, 2.0], [1.0, 2.0]])
    assert np.array_equal(s.covariance, np.zeros((2, 2)))
    s = activation_stats([[0.0, 0.0], [2.0, 0.0]])
    assert np.array_equal(s.mean, [1.0, 0.0])
    assert np.array_equal(s.covariance, [[2.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        activation_stats([[1.0, 2.0]])
    with pytest.raises(ValueError):
        ActivationStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 3)


def test_activation_stats_matches_two_pass_oracle():
    f = np.random.default_rng(0).normal(size=(50, 4)) * 3 + 1
    s = activation_stats(f)
    mean, cov = oracles.two_pass_stats(f)
    np.testing.assert_allclose(s.mean, mean, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(s.covariance, cov, rtol=1e-10, atol=1e-12)


def test_stats_merge_equals_pooled():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(13, 3)) + 2
    merged = activation_stats(a).merge(activation_stats(b))
    whole = activation_stats(np.concatenate([a, b]))
    assert merged.n == 33
    np.testing.assert_allclose(merged.mean, whole.mean, atol=1e-12)
    np.testing.assert_allclose(merged.covariance, whole.covariance, atol=1e-12)


def test_frechet_cases():
    eye = np.eye(2)
    p = ActivationStats([1.0, 0.0], eye, 10)
    q = ActivationStats([0.0, 0.0], eye, 10)
    assert frechet_distance(p, q) == pytest.approx(1.0, abs=1e-12)
    assert frechet_distance(p, p) == 0.0
    # 1-D Gaussians: (sigma_p - sigma_q)^2
    assert frechet_distance(ActivationStats([0.0], [[1.0]], 5), ActivationStats([0.0], [[4.0]], 5)) == \
        pytest.approx(1.0, abs=1e-12)
    # singular covariances reduce to the mean term
    z = ActivationStats([0.0, 3.0], np.zeros((2, 2)), 5)
    assert frechet_distance(z, ActivationStats([4.0, 0.0], np.zeros((2, 2)), 5)) == pytest.approx(25.0)
    with pytest.raises(ValueError):
        frechet_distance(p, ActivationStats([0.0], [[1.0]], 5))


def test_frechet_matches_oracle_3x3():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    p = ActivationStats(rng.normal(size=3), a @ a.T, 10)
    q = ActivationStats(rng.normal(size=3), b @ b.T, 10)
    want = oracles.frechet_eig(p.mean, p.covariance, q.mean, q.covariance)
    assert frechet_distance(p, q) == pytest.approx(want, abs=1e-8)


def test_feature_shift_adds_squared_norm():
    rng = np.random.default_rng(4)
    f = rng.normal(size=(40, 3))
    g = rng.normal(size=(40, 3)) * 2
    g = g - g.mean(0) + f.mean(0)  # equal means
    delta = np.array([0.5, -1.0, 2.0])
    p, q, q_shift = activation_stats(f), activation_stats(g), activation_stats(g + delta)
    assert frechet_distance(p, q_shift) - frechet_distance(p, q) == pytest.approx(delta @ delta, rel=1e-10)


@st.composite
def psd_stats(draw, d=3):
    vals = draw(st.lists(st.floats(-3, 3), min_size=d * d + d, max_size=d * d + d))
    a = np.array(vals[:d * d]).reshape(d, d)
    return ActivationStats(np.array(vals[d * d:]), a @ a.T, 10)


@settings(max_examples=60, deadline=None)
@given(psd_stats(), psd_stats())
def test_frechet_properties(p, q):
    d = frechet_distance(p, q)
    assert d >= 0 and math.isfinite(d)
    assert d == pytest.approx(frechet_distance(q, p), abs=1e-8)
    assert frechet_distance(p, p) == pytest.approx(0.0, abs=1e-8)


def test_random_conv_features_deterministic(images):
    x = images(3)
    f1, f2 = RandomConvFeatures(dim=16, seed=1), RandomConvFeatures(dim=16, seed=1)
    assert f1(x).shape == (3, 16)
    assert np.array_equal(f1(x), f2(x))
    assert not np.array_equal(f1(x), RandomConvFeatures(dim=16, seed=2)(x))
    np.testing.assert_allclose(extract(f1, x, chunk=2), f1(x), rtol=1e-5)  # float32 batching
    assert "seed=1" in f1.identifier


def test_fid_protocol_reproducible(small_model, images):
    content, targets = images(8, seed=1), images(8, seed=2)
    kw = dict(n_content=4, n_styles=2, repeats=3, extractor=RandomConvFeatures(dim=8))
    a = fid_protocol(small_model, content, targets, targets, "A", "B", seed=5, **kw)
    b = fid_protocol(small_model, content, targets, targets, "A", "B", seed=5, **kw)
    c = fid_protocol(small_model, content, targets, targets, "A", "B", seed=6, **kw)
    assert a == b
    assert a["scores"] != c["scores"]
    assert len(a["scores"]) == 3 and a["mean"] == pytest.approx(np.mean(a["scores"]))
    assert a["extractor"].startswith("random-conv") and a["direction"] == "A->B"
    with pytest.warns(SmallSampleWarning):
        fid_protocol(small_model, content[:2], targets, targets, "A", "B", seed=0, **kw)


def test_real_baseline_is_the_floor(images):
    real = images(64, seed=3)
    ext = RandomConvFeatures(dim=8)
    base = real_baseline_fid(real, seed=0, extractor=ext)
    fake = 0.5 + 0.1 * images(64, seed=4)
    other = frechet_distance(activation_stats(ext(real)), activation_stats(ext(fake)))
    assert 0 <= base < other


def test_feature_distance():
    f = np.array([[3.0, 4.0], [1.0, 0.0]])
    assert np.array_equal(feature_distance(f, f), [0.0, 0.0])
    assert feature_distance(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]))[0] == pytest.approx(2.0)


def test_diversity_of_constant_generator_is_zero(images, monkeypatch):
    model = DSMAP(small_config(seed=2))
    monkeypatch.setattr(model, "generate", lambda h, s, d: torch.zeros(h.shape[0], 3, 32, 32))
    assert diversity_score(model, images(2), "A", "B", n_pairs=3, extractor=RandomConvFeatures(dim=8)) == 0.0


def test_diversity_matches_flat_loop(small_model, images):
    x = images(2, seed=7)
    ext = RandomConvFeatures(dim=8, seed=3)
    got = diversity_score(small_model, x, "A", "B", n_pairs=4, extractor=ext, seed=9)
    assert got == diversity_score(small_model, x, "A", "B", n_pairs=4, extractor=ext, seed=9)
    assert got > 0

    seeds = np.random.SeedSequence(9).generate_state(8)
    dists = []
    with torch.no_grad():
        _, c = small_model.encode_content(x, "A")
        h = small_model.map_content(c, "B")
        for k in range(4):
            y1 = small_model.generate(h, small_model.sample_style(2, int(seeds[2 * k])), "B")
            y2 = small_model.generate(h, small_model.sample_style(2, int(seeds[2 * k + 1])), "B")
            f1, f2 = ext(y1), ext(y2)
            for i in range(2):
                u = f1[i] / math.sqrt(sum(v * v for v in f1[i]))
                w = f2[i] / math.sqrt(sum(v * v for v in f2[i]))
                dists.append(sum((a - b) ** 2 for a, b in zip(u, w)))
    assert got == pytest.approx(math.fsum(dists) / len(dists), rel=1e-10)


def test_diversity_invariant_to_pair_order(small_model, images):
    x = images(2, seed=8)
    ext = RandomConvFeatures(dim=8)
    pairs = diversity_pairs(small_model, x, "A", "B", 5, seed=1)
    forward = [feature_distance(ext(a), ext(b)) for a, b in pairs]
    backward = [feature_distance(ext(b), ext(a)) for a, b in reversed(pairs)]
    assert np.mean(np.concatenate(forward)) == pytest.approx(np.mean(np.concatenate(backward)), rel=1e-12)
    with pytest.raises(ValueError):
        diversity_pairs(small_model, x, "A", "B", 0, seed=1)


def test_precomputed_features_adapter(images):
    ext = PrecomputedFeatures(lambda x: x.mean(dim=(2, 3)).numpy(), "channel-means")
    f = ext(images(4))
    assert f.shape == (4, 3) and f.dtype == np.float64
