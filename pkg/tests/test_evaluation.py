"""Frechet distance, embedding stats, condition tables, and the blinded
study kit."""

import numpy as np
import pytest

from angiosynth.dataset import PairedSample
from angiosynth.errors import InputError
from angiosynth.evaluation import (
    EmbeddingStats,
    RandomProjectionEmbedder,
    build_study_kit,
    embed_set,
    evaluate_conditions,
    frechet_distance,
    invert_responses,
    score_study,
)


def mean_pixel_embedder(image):
    return np.array([float(np.mean(image))])


class TestEmbedSet:
    def test_identical_images_zero_covariance(self):
        imgs = [np.full((8, 8, 1), 0.3)] * 3
        stats = embed_set(imgs, mean_pixel_embedder)
        assert np.allclose(stats.covariance, 0.0)
        assert stats.count == 3

    def test_hand_statistics(self):
        imgs = [np.zeros((4, 4, 1)), np.ones((4, 4, 1))]
        stats = embed_set(imgs, mean_pixel_embedder)
        assert stats.mean[0] == pytest.approx(0.5)
        assert stats.covariance[0, 0] == pytest.approx(0.5)  # unbiased

    def test_permutation_invariant(self, rng):
        imgs = [rng.uniform(-1, 1, (8, 8, 1)) for _ in range(5)]
        a = embed_set(imgs, mean_pixel_embedder)
        b = embed_set(imgs[::-1], mean_pixel_embedder)
        assert np.allclose(a.mean, b.mean)
        assert np.allclose(a.covariance, b.covariance)

    def test_needs_two_images(self):
        with pytest.raises(InputError):
            embed_set([np.zeros((4, 4, 1))], mean_pixel_embedder)


class TestFrechet:
    def test_self_distance_zero(self, rng):
        d = 4
        cov = np.eye(d) + 0.1 * np.ones((d, d))
        stats = EmbeddingStats(rng.normal(0, 1, d), cov, 10)
        assert frechet_distance(stats, stats) <= 1e-6

    def test_unit_gaussians_mean_shift(self):
        a = EmbeddingStats([0.0], [[1.0]], 10)
        b = EmbeddingStats([1.0], [[1.0]], 10)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_variance_mismatch(self):
        a = EmbeddingStats([0.0], [[4.0]], 10)
        b = EmbeddingStats([0.0], [[1.0]], 10)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_diagonal_gaussian_closed_form(self, rng):
        for _ in range(100):
            d = int(rng.integers(1, 9))
            mu_a = rng.normal(0, 2, d)
            mu_b = rng.normal(0, 2, d)
            sd_a = rng.uniform(0.2, 3.0, d)
            sd_b = rng.uniform(0.2, 3.0, d)
            a = EmbeddingStats(mu_a, np.diag(sd_a ** 2), 10)
            b = EmbeddingStats(mu_b, np.diag(sd_b ** 2), 10)
            expected = float(np.sum((mu_a - mu_b) ** 2 + (sd_a - sd_b) ** 2))
            assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-6)

    def test_symmetry(self, rng):
        d = 5
        q = rng.normal(0, 1, (d, d))
        cov_a = q @ q.T + 0.1 * np.eye(d)
        q2 = rng.normal(0, 1, (d, d))
        cov_b = q2 @ q2.T + 0.1 * np.eye(d)
        a = EmbeddingStats(rng.normal(0, 1, d), cov_a, 10)
        b = EmbeddingStats(rng.normal(0, 1, d), cov_b, 10)
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8

    def test_monotone_in_mean_shift(self):
        cov = np.eye(3)
        base = EmbeddingStats(np.zeros(3), cov, 10)
        last = -1.0
        for shift in np.linspace(0.1, 3.0, 12):
            moved = EmbeddingStats(np.full(3, shift), cov, 10)
            dist = frechet_distance(base, moved)
            assert dist > last
            last = dist

    def test_dimension_mismatch(self):
        a = EmbeddingStats([0.0], [[1.0]], 10)
        b = EmbeddingStats([0.0, 1.0], np.eye(2), 10)
        with pytest.raises(InputError):
            frechet_distance(a, b)

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(InputError):
            EmbeddingStats([0.0, 0.0], [[1.0, 0.5], [0.1, 1.0]], 10)


class TestRandomProjectionEmbedder:
    def test_deterministic(self, rng):
        img = rng.uniform(-1, 1, (32, 32, 1))
        e1 = RandomProjectionEmbedder(dim=16, seed=3, thumb=16)
        e2 = RandomProjectionEmbedder(dim=16, seed=3, thumb=16)
        assert np.array_equal(e1(img), e2(img))

    def test_dim(self, rng):
        e = RandomProjectionEmbedder(dim=24, thumb=16)
        assert e(rng.uniform(-1, 1, (64, 64, 1))).shape == (24,)


class TestEvaluateConditions:
    @staticmethod
    def _samples(rng, n=4, size=32):
        out = []
        for i in range(n):
            f = rng.uniform(-1, 1, (size, size, 3)).astype(np.float32)
            a = np.tanh(f.mean(axis=2, keepdims=True))
            out.append(PairedSample(f, a, f"p{i}", (0, 0), size))
        return out

    def test_six_conditions_and_deltas(self, rng):
        samples = self._samples(rng)
        embedder = RandomProjectionEmbedder(dim=8, thumb=16)

        def infer_fn(fundus):
            return np.tanh(fundus.mean(axis=2, keepdims=True) * 0.9)

        report = evaluate_conditions(infer_fn, samples, embedder)
        assert list(report.scores) == ["none", "noise", "blur", "sharp",
                                       "whirl", "pinch"]
        assert report.errors == {}
        assert report.deltas["none"] == pytest.approx(0.0, abs=1e-12)
        for name in report.scores:
            assert report.deltas[name] == pytest.approx(
                report.scores[name] - report.scores["none"], abs=1e-12
            )

    def test_self_distance_is_zero(self, rng):
        samples = self._samples(rng)
        embedder = RandomProjectionEmbedder(dim=8, thumb=16)
        real = embed_set([s.angio_crop for s in samples], embedder)
        assert frechet_distance(real, real) <= 1e-6

    def test_failing_condition_recorded_others_continue(self, rng):
        samples = self._samples(rng)
        embedder = RandomProjectionEmbedder(dim=8, thumb=16)
        calls = {"n": 0}

        def flaky_infer(fundus):
            calls["n"] += 1
            # fail on the first sample of the second condition (noise)
            if calls["n"] == len(samples) + 1:
                raise ValueError("synthetic failure")
            return fundus.mean(axis=2, keepdims=True)

        report = evaluate_conditions(flaky_infer, samples, embedder)
        assert "noise" in report.errors
        assert "ValueError" in report.errors["noise"]
        assert "noise" not in report.scores
        assert set(report.scores) == {"none", "blur", "sharp", "whirl",
                                      "pinch"}

    def test_report_serialization(self, rng, tmp_path):
        samples = self._samples(rng)
        embedder = RandomProjectionEmbedder(dim=8, thumb=16)
        report = evaluate_conditions(
            lambda f: f.mean(axis=2, keepdims=True), samples, embedder
        )
        report.to_csv(tmp_path / "r.csv")
        report.to_json(tmp_path / "r.json")
        text = (tmp_path / "r.csv").read_text()
        assert text.count("\n") == 3
        assert "whirl" in text


class TestStudyKit:
    @staticmethod
    def _images(rng, n, offset=0.0):
        return [rng.uniform(-1, 1, (8, 8, 1)) + offset for _ in range(n)]

    def test_balanced_and_blind(self, rng):
        kit = build_study_kit(self._images(rng, 30), self._images(rng, 25),
                             n=40, seed=7)
        assert len(kit.items) == 40
        labels = list(kit.key.values())
        assert labels.count("real") == 20
        assert labels.count("fake") == 20
        ids = [item_id for item_id, _ in kit.items]
        assert ids == [f"item_{i:03d}" for i in range(40)]   # sequential ids
        assert set(kit.key) == set(ids)
        # the shuffle actually interleaves classes
        assert labels != sorted(labels)

    def test_seeded_determinism(self, rng):
        real = self._images(rng, 25)
        fake = self._images(rng, 25)
        k1 = build_study_kit(real, fake, n=40, seed=3)
        k2 = build_study_kit(real, fake, n=40, seed=3)
        assert k1.key == k2.key
        for (i1, im1), (i2, im2) in zip(k1.items, k2.items):
            assert i1 == i2
            assert np.array_equal(im1, im2)

    def test_insufficient_images(self, rng):
        with pytest.raises(InputError):
            build_study_kit(self._images(rng, 10), self._images(rng, 25), n=40)

    def test_odd_size_rejected(self, rng):
        with pytest.raises(InputError):
            build_study_kit(self._images(rng, 25), self._images(rng, 25), n=39)


class TestScoreStudy:
    @staticmethod
    def _key_and_responses(fake_correct=3, real_correct=16):
        """20 fake + 20 real items; the requested number answered right."""
        key, responses = {}, {}
        for i in range(20):
            key[f"f{i}"] = "fake"
            responses[f"f{i}"] = "fake" if i < fake_correct else "real"
        for i in range(20):
            key[f"r{i}"] = "real"
            responses[f"r{i}"] = "real" if i < real_correct else "fake"
        return key, responses

    def test_published_row_values(self):
        key, responses = self._key_and_responses(fake_correct=3,
                                                 real_correct=16)
        report = score_study(responses, key)
        assert report.fake_correct_rate == pytest.approx(15.0)
        assert report.real_correct_rate == pytest.approx(80.0)
        assert report.confusion == pytest.approx(52.5, abs=1e-12)
        assert report.missed == pytest.approx(52.5, abs=1e-12)
        assert report.found == pytest.approx(47.5, abs=1e-12)
        display = report.rounded()
        assert display["missed"] == 53
        assert display["found"] == 48

    def test_perfect_rater(self):
        key, _ = self._key_and_responses()
        responses = dict(key)
        report = score_study(responses, key)
        assert report.confusion == 0.0
        assert report.found == 100.0

    def test_inverted_responses_full_confusion(self):
        key, _ = self._key_and_responses()
        report = score_study(invert_responses(dict(key)), key)
        assert report.confusion == 100.0

    def test_complement_law_exact(self):
        key, responses = self._key_and_responses(fake_correct=7,
                                                 real_correct=11)
        a = score_study(responses, key).confusion
        b = score_study(invert_responses(responses), key).confusion
        assert a + b == 100.0

    def test_missing_ids_listed(self):
        key, responses = self._key_and_responses()
        del responses["f0"]
        with pytest.raises(InputError, match="f0"):
            score_study(responses, key)

    def test_unknown_ids_listed(self):
        key, responses = self._key_and_responses()
        responses["zz"] = "real"
        with pytest.raises(InputError, match="zz"):
            score_study(responses, key)

    def test_bad_label_rejected(self):
        key, responses = self._key_and_responses()
        responses["f0"] = "maybe"
        with pytest.raises(InputError):
            score_study(responses, key)
