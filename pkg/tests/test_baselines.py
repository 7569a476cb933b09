import itertools

import numpy as np
import pytest

from textboost import baselines
from textboost import encoder as enc

from conftest import make_token_dataset


class TestStumpSearch:
    def test_separable_data_perfect_stump(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        stump, err = baselines.fit_stump(x, y, np.full(4, 0.25), K=2)
        assert err == 0.0
        assert np.array_equal(stump.predict(x), y)

    def test_constant_features_rejected(self):
        x = np.ones((10, 3))
        y = np.arange(10) % 2
        with pytest.raises(ValueError, match="constant"):
            baselines.fit_stump(x, y, np.ones(10), K=2)

    def test_xor_like_best_err_quarter(self):
        # three of four corners separable; (0,1) is not
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 1])
        w = np.full(4, 0.25)
        stump, err = baselines.fit_stump(x, y, w, K=2)
        assert np.isclose(err, 0.25, rtol=1e-12)
        # brute-force every split of every feature to confirm the optimum
        best = np.inf
        for j in range(2):
            for t in (0.5,):
                for le, gt in itertools.product(range(2), repeat=2):
                    preds = np.where(x[:, j] <= t, le, gt)
                    best = min(best, w[preds != y].sum())
        assert np.isclose(err, best, rtol=1e-12)


class TestSammeOracle:
    def test_separable_round_one_clamps(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        rounds = baselines.samme_oracle(x, y, 1, 2)
        assert rounds[0].err == 0.0
        want_alpha = np.log((1 - 1e-6) / 1e-6)  # + ln(K-1) = 0 for K=2
        assert np.isclose(rounds[0].alpha, want_alpha, rtol=1e-9)

    def test_xor_like_alpha_ln3(self):
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 1])
        rounds = baselines.samme_oracle(x, y, 1, 2)
        assert np.isclose(rounds[0].err, 0.25, rtol=1e-12)
        assert np.isclose(rounds[0].alpha, np.log(3.0), rtol=1e-12)

    def test_degenerate_matrix_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            baselines.samme_oracle(np.ones((6, 2)), np.arange(6) % 2, 3, 2)

    def test_weights_never_renormalized(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 2))
        y = (x[:, 0] > 0).astype(np.int64)
        y[:5] = 1 - y[:5]
        rounds = baselines.samme_oracle(x, y, 3, 2)
        # total mass grows monotonically because mistakes are inflated
        totals = [r.weights_after.sum() for r in rounds]
        assert totals[0] >= 1.0
        assert all(a <= b for a, b in zip(totals, totals[1:]))


FAST = enc.TrainConfig(lr=3e-3, epochs=6)


class TestBagging:
    @pytest.fixture
    def dataset(self):
        return make_token_dataset(np.random.default_rng(7), n=120)

    def test_identical_rates_identical_members(self, tiny_config, dataset):
        bag, _ = baselines.bag_train(
            dataset, [1e-3, 1e-3], 5, config=tiny_config, train_cfg=FAST
        )
        assert np.array_equal(bag.members[0].params, bag.members[1].params)

    def test_needs_two_rates(self, tiny_config, dataset):
        with pytest.raises(ValueError):
            baselines.bag_train(dataset, [1e-3], 5, config=tiny_config, train_cfg=FAST)

    def test_hand_average(self):
        p1 = np.array([[0.6, 0.4]])
        p2 = np.array([[0.2, 0.8]])
        avg = np.mean([p1, p2], axis=0)
        assert np.allclose(avg, [[0.4, 0.6]])
        assert avg.argmax(axis=1).tolist() == [1]

    def test_bag_predict_average_and_order_invariance(self, tiny_config, dataset):
        bag, _ = baselines.bag_train(
            dataset, [8e-4, 1.6e-3, 3e-3], 5, config=tiny_config, train_cfg=FAST
        )
        preds, avg = baselines.bag_predict(bag, dataset)
        assert np.allclose(avg.sum(axis=1), 1.0, atol=1e-6)
        swapped = baselines.BagEnsemble(members=list(reversed(bag.members)), K=bag.K)
        preds2, avg2 = baselines.bag_predict(swapped, dataset)
        assert np.array_equal(preds, preds2)
        assert np.allclose(avg, avg2, atol=1e-12)

    def test_single_member_predicts_like_member(self, tiny_config, dataset):
        bag, _ = baselines.bag_train(
            dataset, [1e-3, 2e-3], 5, config=tiny_config, train_cfg=FAST
        )
        solo = baselines.BagEnsemble(members=[bag.members[0]], K=bag.K)
        preds, avg = baselines.bag_predict(solo, dataset)
        model = enc.model_from_snapshot(bag.members[0])
        want = model.predict_proba(dataset.packed)
        assert np.allclose(avg, want, atol=1e-12)

    def test_diverged_members_dropped_and_too_few_is_an_error(self, tiny_config, dataset):
        with pytest.warns(RuntimeWarning, match="dropped"):
            with pytest.raises(RuntimeError, match="fewer than 2"):
                baselines.bag_train(
                    dataset, [1e154, 1e-3], 5, config=tiny_config, train_cfg=FAST
                )
        bag, log = baselines.bag_train(
            dataset, [1e154, 1e-3, 2e-3], 5, config=tiny_config, train_cfg=FAST
        )
        assert len(bag.members) == 2
        assert [rec["status"] for rec in log] == ["diverged", "ok", "ok"]

    def test_members_not_above_min_rule(self, tiny_config, dataset):
        # sanity trend: the averaged ensemble is at least as good as the
        # worst member on the data it was trained on, with 1-point slack
        bag, _ = baselines.bag_train(
            dataset, [8e-4, 1.6e-3, 3e-3], 5, config=tiny_config, train_cfg=FAST
        )
        member_accs = []
        for snap in bag.members:
            model = enc.model_from_snapshot(snap)
            member_accs.append(
                (model.predict_proba(dataset.packed).argmax(axis=1) == dataset.labels).mean() * 100
            )
        preds, _ = baselines.bag_predict(bag, dataset)
        bag_acc = (preds == dataset.labels).mean() * 100
        assert bag_acc >= min(member_accs) - 1.0
