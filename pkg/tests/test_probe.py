import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdmae import tensor as T
from hdmae.errors import ConfigError, ContractError
from hdmae.gradcheck import check_fn
from hdmae.model import encoder_forward, pos_tables
from hdmae.patches import patchify
from hdmae.phantom import synth_phantom
from hdmae.probe import (
    ProbeHead,
    Standardizer,
    auroc,
    evaluate_probe,
    extract_features,
    extract_features_batch,
    f1_accuracy,
    probe_loss,
    train_probe,
    write_probe_report,
)
from hdmae.rng import RngStream


def brute_force_auroc(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    gt = tie = 0
    for p in pos:
        for n in neg:
            if p > n:
                gt += 1
            elif p == n:
                tie += 1
    return (gt + 0.5 * tie) / (len(pos) * len(neg))


class TestExtractFeatures:
    def test_identical_images_identical_features(self, mini_params, mini_vit_cfg):
        img = synth_phantom(1, mini_vit_cfg.patch, lesion=False).image
        f1 = extract_features(mini_params, img, mini_vit_cfg.patch)
        f2 = extract_features(mini_params, img, mini_vit_cfg.patch)
        assert np.array_equal(f1, f2)
        assert f1.shape == (mini_vit_cfg.enc_dim,)

    def test_mean_pooling_matches_token_average(self, mini_params, mini_vit_cfg):
        img = synth_phantom(2, mini_vit_cfg.patch, lesion=True).image
        feats = extract_features(mini_params, img, mini_vit_cfg.patch)
        patches = patchify(img, mini_vit_cfg.patch)
        enc_pos, _ = pos_tables(mini_vit_cfg)
        tokens = T.add(
            T.add_bias(T.matmul(patches, mini_params.patch_w), mini_params.patch_b), enc_pos
        )
        per_token = encoder_forward(mini_params, tokens).data
        npt.assert_allclose(feats, per_token.mean(axis=0), atol=1e-6)

    def test_config_mismatch_rejected(self, mini_params, toy_patch_cfg):
        img = synth_phantom(1, toy_patch_cfg, lesion=False).image
        with pytest.raises(ContractError):
            extract_features(mini_params, img, toy_patch_cfg)

    def test_batch_matches_single(self, mini_params, mini_vit_cfg):
        imgs = [synth_phantom(s, mini_vit_cfg.patch, s % 2 == 0).image for s in range(3)]
        batch = extract_features_batch(mini_params, imgs)
        for i, img in enumerate(imgs):
            npt.assert_allclose(batch[i], extract_features(mini_params, img, mini_vit_cfg.patch), atol=1e-6)


class TestTrainProbe:
    def test_separable_toy_reaches_perfect_accuracy(self):
        feats = np.concatenate([np.full((20, 1), 1.0), np.full((20, 1), -1.0)])
        labels = np.array([1] * 20 + [0] * 20)
        head = train_probe(feats, labels, steps=500, lr=0.5)
        _, acc = f1_accuracy(head.scores(feats), labels)
        assert acc == 1.0

    def test_zero_steps_keeps_zero_init(self):
        feats = RngStream(1).normal((10, 4))
        labels = np.array([0, 1] * 5)
        head = train_probe(feats, labels, steps=0)
        assert np.all(head.weight == 0.0) and head.bias == 0.0
        npt.assert_array_equal(head.scores(feats), 0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigError):
            train_probe(np.ones((4, 2)), np.ones(4), steps=1)

    def test_cross_entropy_gradcheck_through_head(self):
        feats = RngStream(2).normal((6, 3))
        labels = (RngStream(3).uniform(6) > 0.5).astype(np.float64)

        def fn(w, b):
            x = T.Tensor(feats, dtype=np.float64)
            z = T.reshape(T.add_bias(T.matmul(x, T.reshape(w, (3, 1))), b), (6,))
            y = T.Tensor(labels, dtype=np.float64)
            return T.mean(T.sub(T.softplus(z), T.mul(y, z)))

        res = check_fn("probe_xent", fn, [RngStream(4).normal(3), RngStream(5).normal(1)])
        assert res.ok and res.err < 1e-3

    def test_loss_non_increasing_at_default_lr(self):
        rng = RngStream(6)
        feats = np.concatenate([rng.normal((30, 4)) + 0.8, rng.normal((30, 4)) - 0.8])
        labels = np.array([1] * 30 + [0] * 30)
        losses: list[float] = []
        head = train_probe(feats, labels, steps=120, record_loss=losses)
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)
        assert probe_loss(head, feats, labels) <= losses[0]


class TestAuroc:
    def test_perfect_ranking(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_hand_counted_three_of_four_pairs(self):
        assert auroc([0.9, 0.6, 0.4, 0.1], [1, 0, 1, 0]) == 0.75

    def test_all_ties_give_half(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_missing_class_rejected(self):
        with pytest.raises(ContractError):
            auroc([0.1, 0.2], [1, 1])

    def test_matches_brute_force_exactly_on_random_sets(self, np_rng):
        for _ in range(100):
            n = int(np_rng.integers(2, 51))
            labels = np_rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(np_rng.random(n), 2)  # coarse grid forces ties
            assert auroc(scores, labels) == brute_force_auroc(scores, labels)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_invariant_under_strictly_increasing_transform(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 40))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.random(n)
        transformed = np.exp(3.0 * scores) + 1.0  # strictly increasing
        assert auroc(scores, labels) == auroc(transformed, labels)

    def test_negation_complements_when_no_ties(self):
        scores = np.array([0.11, 0.52, 0.23, 0.84, 0.95, 0.36])
        labels = np.array([0, 1, 0, 1, 0, 1])
        assert auroc(scores, labels) + auroc(-scores, labels) == 1.0


class TestF1Accuracy:
    def test_perfect_predictions(self):
        f1, acc = f1_accuracy([0.9, 0.9, 0.1, 0.1], [1, 1, 0, 0])
        assert f1 == 1.0 and acc == 1.0

    def test_no_predicted_positives_is_zero_f1(self):
        f1, acc = f1_accuracy([0.1, 0.2, 0.3], [1, 0, 1])
        assert f1 == 0.0
        assert acc == pytest.approx(1 / 3)

    def test_hand_evaluated_confusion(self):
        # TP=2 FP=1 FN=1 TN=2 -> precision=recall=2/3, f1=2/3, acc=4/6
        scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.05]
        labels = [1, 1, 0, 1, 0, 0]
        f1, acc = f1_accuracy(scores, labels)
        assert f1 == pytest.approx(2 / 3)
        assert acc == pytest.approx(4 / 6)


class TestReport:
    def test_csv_schema(self, tmp_path):
        head = ProbeHead(weight=np.array([1.0]), bias=0.0)
        feats = np.array([[2.0], [-2.0], [1.5], [-1.0]])
        rows = [evaluate_probe(head, feats, [1, 0, 1, 0], "eval")]
        path = tmp_path / "report.csv"
        write_probe_report(rows, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "split,auroc,f1,accuracy,n"
        assert lines[1].startswith("eval,1.0,1.0,1.0,4")

    def test_standardizer_centers_training_features(self):
        feats = RngStream(7).normal((50, 6)) * 3.0 + 2.0
        std = Standardizer.fit(feats)
        out = std.apply(feats)
        npt.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        npt.assert_allclose(out.std(axis=0), 1.0, atol=1e-12)
