"""Evaluation harness tests: protocol, consistency ratio, baselines, continual."""

import numpy as np
import pytest
from sklearn.base import clone

from condenset import convnet, data, evaluation
from condenset.errors import ConfigError, ShapeError
from condenset.estimators import RandomCoreset
from condenset.evaluation import (
    CoresetConfig,
    EvalConfig,
    consistency_ratio,
    continual_harness,
    continual_stage_seed,
    evaluate,
    herding_select,
    select_forgetting,
    select_herding,
    select_random,
)


def small_eval_cfg(**kw):
    base = dict(runs=1, epochs=4, batch=32, model_depth=1, model_width=4, seed=0)
    base.update(kw)
    return EvalConfig(**base)


def blob_pair(classes=3, per_class=40, hw=8, seed=0):
    train = data.make_toy(classes=classes, per_class=per_class, hw=hw, seed=seed)
    test = data.make_toy(classes=classes, per_class=20, hw=hw, seed=seed, split="test")
    return train, test


class TestEvaluate:
    def test_full_toy_set_reaches_reference_accuracy(self):
        train, test = blob_pair(classes=3, per_class=60)
        report = evaluate(train.images, train.labels, test.images, test.labels,
                          small_eval_cfg(epochs=8, model_depth=2, model_width=16))
        assert report.mean >= 0.9

    def test_single_run_has_zero_std(self):
        train, test = blob_pair(classes=2, per_class=10)
        report = evaluate(train.images[:8], train.labels[:8], test.images, test.labels,
                          small_eval_cfg(runs=1, epochs=2))
        assert report.std == 0.0
        assert len(report.accuracies) == 1

    def test_accuracies_in_unit_interval(self):
        train, test = blob_pair(classes=2, per_class=10)
        report = evaluate(train.images[:8], train.labels[:8], test.images, test.labels,
                          small_eval_cfg(runs=3, epochs=2))
        assert all(0.0 <= a <= 1.0 for a in report.accuracies)
        assert abs(report.mean - np.mean(report.accuracies)) < 1e-12

    def test_empty_inputs_rejected(self):
        train, test = blob_pair(classes=2, per_class=10)
        with pytest.raises(ShapeError):
            evaluate(train.images[:0], train.labels[:0], test.images, test.labels,
                     small_eval_cfg())
        with pytest.raises(ShapeError):
            evaluate(train.images, train.labels, test.images[:0], test.labels[:0],
                     small_eval_cfg())


class TestConsistencyRatio:
    def _params(self, hw=8, seed=0, width=4):
        cfg = convnet.ConvNetConfig(depth=1, width=width, in_channels=3, input_hw=hw,
                                    num_classes=3)
        return convnet.init_params(cfg, seed=seed)

    def test_pixel_identical_sample_contributes_one_at_k1(self):
        train, _ = blob_pair(classes=3, per_class=10)
        params = self._params()
        syn = train.images[:1].copy()  # class 0, identical to a real image
        ratio = consistency_ratio(syn, np.array([0]), train.images, train.labels,
                                  params, k=1)
        assert ratio == 1.0

    def test_matches_exhaustive_brute_force(self):
        rng = np.random.default_rng(0)
        real = rng.normal(size=(50, 3, 8, 8)).astype(np.float32)
        real_labels = rng.integers(0, 3, size=50)
        syn = rng.normal(size=(10, 3, 8, 8)).astype(np.float32)
        syn_labels = rng.integers(0, 3, size=10)
        params = self._params(seed=1)
        for k in (1, 3, 7, 50):
            got = consistency_ratio(syn, syn_labels, real, real_labels, params, k)
            fs = convnet.embed_array(params, syn).astype(np.float64)
            fr = convnet.embed_array(params, real).astype(np.float64)
            total = 0
            for i in range(10):
                dists = [(float(((fs[i] - fr[j]) ** 2).sum()), j) for j in range(50)]
                dists.sort()  # ties toward the lowest real index
                hits = sum(1 for _, j in dists[:k] if real_labels[j] == syn_labels[i])
                total += hits
            assert got == pytest.approx(total / (10 * k), abs=1e-12)

    def test_ratio_in_unit_interval_for_all_k(self):
        train, _ = blob_pair(classes=3, per_class=5)
        params = self._params(seed=2)
        syn = train.images[:6]
        labels = train.labels[:6]
        for k in (1, 2, 5, 15):
            r = consistency_ratio(syn, labels, train.images, train.labels, params, k)
            assert 0.0 <= r <= 1.0

    def test_invariant_under_feature_rescaling(self):
        train, _ = blob_pair(classes=3, per_class=8)
        params = self._params(seed=3)
        syn, syn_labels = train.images[:5], train.labels[:5]
        base = consistency_ratio(syn, syn_labels, train.images, train.labels, params, 5)
        # positive rescaling of every feature: scale the last norm's gain
        # (beta is zero at init, and relu/pool/flatten are positively homogeneous)
        params.tensors["block0.norm.gamma"].data *= 3.0
        scaled = consistency_ratio(syn, syn_labels, train.images, train.labels, params, 5)
        assert base == scaled

    def test_k_out_of_range(self):
        train, _ = blob_pair(classes=2, per_class=5)
        params = self._params(seed=4)
        with pytest.raises(ConfigError):
            consistency_ratio(train.images[:2], train.labels[:2], train.images,
                              train.labels, params, k=0)
        with pytest.raises(ConfigError):
            consistency_ratio(train.images[:2], train.labels[:2], train.images,
                              train.labels, params, k=len(train) + 1)


class TestSelectors:
    def test_random_reproducible_and_balanced(self):
        train, _ = blob_pair(classes=3, per_class=20)
        a = select_random(train.labels, 3, ipc=4, seed=5)
        b = select_random(train.labels, 3, ipc=4, seed=5)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(np.bincount(train.labels[a], minlength=3), 4)

    def test_herding_one_dimensional_hand_checkable(self):
        # class 0 features: [0.0, 0.1, 1.0], mean 0.3667 -> picks 0.1 then 1.0
        # class 1 features: [2.0, 3.0],      mean 2.5    -> picks 2.0 (tie, lowest index)
        features = np.array([[0.0], [0.1], [1.0], [2.0], [3.0]])
        labels = np.array([0, 0, 0, 1, 1])
        picked = herding_select(features, labels, 2, ipc=2)
        np.testing.assert_array_equal(picked[:2], [1, 2])
        assert picked[2] == 3

    def test_herding_first_pick_nearest_class_mean(self):
        rng = np.random.default_rng(6)
        feats = rng.normal(size=(30, 4))
        labels = np.zeros(30, dtype=np.int64)
        first = herding_select(feats, labels, 1, ipc=1)[0]
        mu = feats.mean(axis=0)
        expected = np.argmin(((feats - mu) ** 2).sum(axis=1))
        assert first == expected

    def test_herding_deterministic_given_model_and_order(self):
        train, _ = blob_pair(classes=2, per_class=15)
        cfg = CoresetConfig(epochs=2, model_depth=1, model_width=4, seed=7)
        a = select_herding(train.images, train.labels, 2, ipc=3, cfg=cfg)
        b = select_herding(train.images, train.labels, 2, ipc=3, cfg=cfg)
        np.testing.assert_array_equal(a, b)

    def test_forgetting_balanced_and_deterministic(self):
        train, _ = blob_pair(classes=2, per_class=15)
        cfg = CoresetConfig(forgetting_epochs=2, model_depth=1, model_width=4, seed=8)
        a = select_forgetting(train.images, train.labels, 2, ipc=3, cfg=cfg)
        b = select_forgetting(train.images, train.labels, 2, ipc=3, cfg=cfg)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(np.bincount(train.labels[a], minlength=2), 3)

    def test_all_selectors_return_exact_budget(self):
        train, _ = blob_pair(classes=3, per_class=12)
        cfg = CoresetConfig(epochs=1, forgetting_epochs=1, model_depth=1,
                            model_width=2, seed=0)
        for picker in (
            lambda: select_random(train.labels, 3, 2, 0),
            lambda: select_herding(train.images, train.labels, 3, 2, cfg),
            lambda: select_forgetting(train.images, train.labels, 3, 2, cfg),
        ):
            idx = picker()
            assert len(idx) == 6
            np.testing.assert_array_equal(np.bincount(train.labels[idx], minlength=3), 2)

    def test_insufficient_samples_rejected(self):
        train, _ = blob_pair(classes=2, per_class=3)
        with pytest.raises(ConfigError):
            select_random(train.labels, 2, ipc=5, seed=0)


class TestContinualHarness:
    def test_bookkeeping_and_step_one_reduction(self):
        train, test = blob_pair(classes=4, per_class=12)
        strategy = RandomCoreset(ipc=2, seed=0)
        cfg = small_eval_cfg(epochs=2)
        out = continual_harness(strategy, train, test, steps=2, mem_ipc=2,
                                seeds=[11], eval_cfg=cfg)
        assert np.asarray(out["curves"]).shape == (1, 2)
        assert out["mean_curve"][0] >= 0.0

        # replay stage 1 by hand: same class order, fit seed, and eval seed
        order = np.random.default_rng(11).permutation(4)
        stage_classes = order[:2]
        remap = {int(c): i for i, c in enumerate(stage_classes)}
        mask = np.isin(train.labels, stage_classes)
        est = clone(strategy)
        est.set_params(ipc=2, seed=continual_stage_seed(11, 0, 0))
        est.fit(train.images[mask],
                np.array([remap[int(c)] for c in train.labels[mask]]))
        seen = np.sort(stage_classes)
        seen_remap = {int(c): i for i, c in enumerate(seen)}
        my = np.array([seen_remap[int(stage_classes[j])] for j in est.labels_])
        tmask = np.isin(test.labels, seen)
        ty = np.array([seen_remap[int(c)] for c in test.labels[tmask]])
        from dataclasses import asdict

        stage_cfg = EvalConfig(**{**asdict(cfg), "runs": 1,
                                  "seed": continual_stage_seed(11, 0, 1)})
        report = evaluate(est.images_, my, test.images[tmask], ty, stage_cfg,
                          num_classes=2)
        assert out["curves"][0][0] == pytest.approx(report.mean, abs=1e-12)

    def test_memory_grows_class_balanced(self):
        train, test = blob_pair(classes=4, per_class=10)
        sizes = []

        class SpyCoreset(RandomCoreset):
            def fit(self, X, y):
                super().fit(X, y)
                sizes.append(len(self.images_))
                return self

        continual_harness(SpyCoreset(ipc=2, seed=0), train, test, steps=2, mem_ipc=3,
                          seeds=[0], eval_cfg=small_eval_cfg(epochs=1))
        # each stage contributes (classes/steps) * mem_ipc images
        assert sizes == [6, 6]

    def test_invalid_partition_rejected(self):
        train, test = blob_pair(classes=3, per_class=6)
        with pytest.raises(ConfigError):
            continual_harness(RandomCoreset(), train, test, steps=2, mem_ipc=1,
                              seeds=[0], eval_cfg=small_eval_cfg(epochs=1))
