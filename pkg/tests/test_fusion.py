import numpy as np
import pytest

from textboost import baselines, boosting, fusion
from textboost import encoder as enc

from conftest import make_token_dataset
from gradcheck import REL_TOL, check_group


def fixed_ensemble(per_round_probs, alphas, K=2):
    class Fixed:
        def __init__(self, probs):
            self.probs = np.asarray(probs, dtype=np.float64)

        def predict_proba(self, dataset):
            return self.probs

        def to_dict(self):
            return {"probs": self.probs.tolist()}

    rounds = [
        boosting.BoostRound(index=i + 1, model=Fixed(p), alpha=a, err=0.2,
                            train_predictions=np.array([]))
        for i, (p, a) in enumerate(zip(per_round_probs, alphas))
    ]
    return boosting.BoostEnsemble(K=K, learner_kind="stump", sharing_mode="privacy",
                                  rounds=rounds)


class TestBuildFeature:
    def test_hand_example(self):
        ens = fixed_ensemble([[[0.6, 0.4]], [[0.3, 0.7]]], [1.0, 2.0])
        feats = fusion.build_feature(ens, dataset=None)
        assert np.allclose(feats, [[0.6, 0.4, 0.6, 1.4]], rtol=1e-12)

    def test_unit_alphas_concatenate_softmax(self):
        ens = fixed_ensemble([[[0.6, 0.4]], [[0.3, 0.7]]], [1.0, 1.0])
        feats = fusion.build_feature(ens, None)
        assert np.allclose(feats, [[0.6, 0.4, 0.3, 0.7]])

    def test_block_sums_equal_alphas(self):
        rng = np.random.default_rng(0)
        probs1 = rng.dirichlet(np.ones(3), size=5)
        probs2 = rng.dirichlet(np.ones(3), size=5)
        ens = fixed_ensemble([probs1, probs2], [0.7, 1.9], K=3)
        feats = fusion.build_feature(ens, None)
        blocks = feats.reshape(5, 2, 3).sum(axis=2)
        assert np.allclose(blocks[:, 0], 0.7, atol=1e-6)
        assert np.allclose(blocks[:, 1], 1.9, atol=1e-6)


class TestFusionHead:
    def test_zero_params_uniform_and_class_zero(self):
        head = fusion.FusionHead((6, 24, 3), seed=0)
        head.params[:] = 0.0
        probs = head.probs(np.random.default_rng(1).normal(size=(4, 6)))
        assert np.allclose(probs, 1 / 3, atol=1e-12)
        assert head.probs(np.zeros((2, 6))).argmax(axis=1).tolist() == [0, 0]

    def test_depth_zero_is_linear(self):
        head = fusion.FusionHead((4, 2), seed=1)
        x = np.random.default_rng(2).normal(size=(3, 4))
        w, b = head._unpack(head.params)[0]
        assert np.allclose(head.logits(x), x @ w + b)

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        head = fusion.FusionHead((5, 20, 3), seed=4)
        feats = rng.normal(size=(8, 5))
        labels = rng.integers(0, 3, size=8)
        _, grad = head.loss_and_grad(feats, labels)

        def loss_fn():
            l, _ = head.loss_and_grad(feats, labels)
            return l

        worst = check_group(head.params, loss_fn, grad,
                            slice(0, head.n_params), rng, max_checks=60)
        assert worst < REL_TOL

    def test_save_load_roundtrip(self, tmp_path):
        head = fusion.FusionHead((6, 24, 3), seed=5, ensemble_hash="abc")
        head.save(tmp_path / "f.bgf")
        assert (tmp_path / "f.bgf").read_bytes()[:4] == b"BGF1"
        back = fusion.FusionHead.load(tmp_path / "f.bgf")
        assert back.dims == head.dims
        assert back.ensemble_hash == "abc"
        assert np.array_equal(back.params, head.params)


@pytest.fixture(scope="module")
def stump_setup():
    rng = np.random.default_rng(20240601)
    x = rng.normal(size=(240, 3))
    cuts = np.quantile(x[:, 0], [1 / 3, 2 / 3])
    y = np.digitize(x[:, 0] + 0.4 * x[:, 1], np.quantile(x[:, 0] + 0.4 * x[:, 1], [1/3, 2/3]))
    y = y.astype(np.int64)
    train = baselines.ArrayDataset(features=x[:160], labels=y[:160], K=3)
    dev = baselines.ArrayDataset(features=x[160:], labels=y[160:], K=3)
    ens, _ = boosting.boost_train(train, baselines.StumpBoostLearner(), 6, seed=0)
    return train, dev, ens


class TestTrainFusion:
    def test_bases_frozen_and_deterministic(self, stump_setup):
        train, dev, ens = stump_setup
        digest = ens.params_digest()
        cfg = fusion.FusionConfig(max_epochs=5)
        head1, _ = fusion.train_fusion(ens, train, dev, cfg, seed=1)
        assert ens.params_digest() == digest
        head2, _ = fusion.train_fusion(ens, train, dev, cfg, seed=1)
        assert np.array_equal(head1.params, head2.params)

    def test_linear_head_at_least_matches_vote(self, stump_setup):
        train, dev, ens = stump_setup
        cfg = fusion.FusionConfig(depth=0, lr=5e-3, max_epochs=200, patience=200)
        head, _ = fusion.train_fusion(ens, train, dev, cfg, seed=2)
        vote_preds, _ = boosting.vote_predict(ens, dev)
        vote_acc = (vote_preds == dev.labels).mean() * 100
        fusion_preds, _ = fusion.fusion_predict(ens, head, dev)
        fusion_acc = (fusion_preds == dev.labels).mean() * 100
        assert fusion_acc >= vote_acc - 0.5

    def test_dimension_mismatch_rejected(self, stump_setup):
        _, dev, ens = stump_setup
        wrong = fusion.FusionHead((4, 3), seed=0)
        with pytest.raises(ValueError, match="features"):
            fusion.fusion_predict(ens, wrong, dev)

    def test_prediction_deterministic_and_order_independent(self, stump_setup):
        train, dev, ens = stump_setup
        head, _ = fusion.train_fusion(ens, train, dev, fusion.FusionConfig(max_epochs=3), seed=3)
        preds, probs = fusion.fusion_predict(ens, head, dev)
        # reversing example order permutes outputs identically
        rev = baselines.ArrayDataset(features=dev.features[::-1].copy(),
                                     labels=dev.labels[::-1].copy(), K=3)
        preds_rev, probs_rev = fusion.fusion_predict(ens, head, rev)
        assert np.array_equal(preds_rev[::-1], preds)
        assert np.allclose(probs_rev[::-1], probs, atol=1e-12)

    def test_head_dims_scale_with_ensemble(self, stump_setup):
        _, _, ens = stump_setup
        dims = fusion.head_dims(ens, fusion.FusionConfig(depth=2, hidden_multiple=4))
        mk = ens.m_effective * ens.K
        assert dims == (mk, 4 * mk, 4 * mk, ens.K)

    def test_single_member_fusion_close_to_vote(self, tiny_config):
        # with one base model the fusion head has nothing to combine and
        # should land within a point of the weighted vote
        rng = np.random.default_rng(12)
        train = make_token_dataset(rng, n=200)
        dev = make_token_dataset(rng, n=90)
        learner = boosting.NeuralBoostLearner(
            tiny_config, enc.TrainConfig(lr=3e-3, epochs=16), "random"
        )
        ens, _ = boosting.boost_train(train, learner, 1, seed=5)
        head, _ = fusion.train_fusion(
            ens, train, dev,
            fusion.FusionConfig(lr=5e-3, max_epochs=80, patience=15), seed=5,
        )
        vote_preds, _ = boosting.vote_predict(ens, dev)
        fusion_preds, _ = fusion.fusion_predict(ens, head, dev)
        vote_acc = (vote_preds == dev.labels).mean() * 100
        fusion_acc = (fusion_preds == dev.labels).mean() * 100
        assert fusion_acc >= vote_acc - 1.0
