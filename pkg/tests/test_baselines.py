"""Baseline scorer suite: closed-form oracles and limiting behavior.

Most checks use linear networks (no hidden layers) so the penultimate
features equal the raw inputs and every fitted quantity has a hand
formula.
"""

import numpy as np
import pytest

from spod.baselines import (CorpDetector, DiceDetector, KnnDetector,
                            MahalanobisDetector, NciDetector, ReactDetector,
                            RevisitedPcaDetector, energy_score,
                            max_logit_score, msp_score, odin_score)
from spod.errors import DimensionError, EmptyClassError, ValidationError
from spod.nn import forward_batch, mlp, softmax


@pytest.fixture()
def linear_net():
    return mlp(6, [], 3, seed=42)


@pytest.fixture()
def relu_net():
    return mlp(6, [12], 3, seed=43)


def rand_logits(seed=0, n=20, c=4):
    return np.random.default_rng(seed).normal(size=(n, c)) * 3.0


# ------------------------------------------------------------ logit scorers


def test_msp_equals_softmax_max():
    logits = rand_logits()
    np.testing.assert_array_equal(msp_score(logits), softmax(logits).max(axis=1))


def test_max_logit():
    logits = rand_logits(1)
    np.testing.assert_array_equal(max_logit_score(logits), logits.max(axis=1))


def test_odin_at_unit_temperature_is_msp():
    logits = rand_logits(2)
    np.testing.assert_allclose(odin_score(logits, temperature=1.0),
                               msp_score(logits), rtol=0, atol=0)


def test_odin_high_temperature_flattens_to_uniform():
    logits = rand_logits(3, c=5)
    scores = odin_score(logits, temperature=1e8)
    np.testing.assert_allclose(scores, 1.0 / 5.0, atol=1e-6)


def test_odin_orders_by_margin_not_magnitude():
    # at high T, odin ranks by the logit gap: scaling all logits up
    # does not change msp's winner but does change the gap seen by odin
    confident = np.array([[10.0, 0.0, 0.0]])
    hesitant = np.array([[10.5, 10.0, 10.0]])
    t = 1000.0
    assert odin_score(confident, t)[0] > odin_score(hesitant, t)[0]


def test_energy_shift_property():
    logits = rand_logits(4)
    base = energy_score(logits)
    shifted = energy_score(logits + 7.25)
    np.testing.assert_allclose(shifted, base + 7.25, rtol=1e-12)


def test_energy_formula_and_temperature():
    logits = np.array([[1.0, 2.0, 3.0]])
    expected = np.log(np.exp(1.0) + np.exp(2.0) + np.exp(3.0))
    assert energy_score(logits)[0] == pytest.approx(expected, rel=1e-12)
    t = 2.5
    expected_t = t * np.log(np.exp(1.0 / t) + np.exp(2.0 / t) + np.exp(3.0 / t))
    assert energy_score(logits, temperature=t)[0] == pytest.approx(expected_t, rel=1e-12)


def test_energy_is_stable_for_huge_logits():
    logits = np.array([[1e4, 0.0]])
    assert energy_score(logits)[0] == pytest.approx(1e4)


def test_logit_scorer_validation():
    with pytest.raises(DimensionError):
        msp_score(np.zeros(3))
    with pytest.raises(ValidationError):
        odin_score(rand_logits(), temperature=0.0)
    with pytest.raises(ValidationError):
        energy_score(rand_logits(), temperature=-1.0)


# ------------------------------------------------------------------- dice


def test_dice_mask_drops_exact_count_of_smallest_weights(relu_net):
    W, _ = relu_net.group_params(relu_net.groups[-1])
    for p in (0.0, 0.3, 0.7):
        det = DiceDetector(relu_net, p=p)
        n_zero = int(round(p * W.size))
        assert int((det.mask == 0.0).sum()) == n_zero
        # exactly the smallest |W| entries are dropped
        if n_zero:
            kept_min = np.abs(W[det.mask == 1.0]).min()
            dropped_max = np.abs(W[det.mask == 0.0]).max()
            assert dropped_max <= kept_min
        np.testing.assert_array_equal(det.W, W * det.mask)
        np.testing.assert_array_equal(det.b, relu_net.group_params(relu_net.groups[-1])[1])


def test_dice_zero_sparsity_is_plain_energy(relu_net):
    X = np.random.default_rng(5).normal(size=(15, 6))
    logits, _ = forward_batch(relu_net, X)
    det = DiceDetector(relu_net, p=0.0)
    np.testing.assert_allclose(det.score_batch(relu_net, X),
                               energy_score(logits), rtol=1e-12)


def test_dice_sparsified_scores_differ(relu_net):
    X = np.random.default_rng(6).normal(size=(15, 6))
    logits, _ = forward_batch(relu_net, X)
    det = DiceDetector(relu_net, p=0.7)
    assert not np.allclose(det.score_batch(relu_net, X), energy_score(logits))


def test_dice_validation(relu_net):
    with pytest.raises(ValidationError):
        DiceDetector(relu_net, p=1.0)
    with pytest.raises(ValidationError):
        DiceDetector(relu_net, p=-0.1)
    det = DiceDetector(relu_net, p=0.5)
    wrong_width = mlp(6, [9], 3, seed=1)
    with pytest.raises(DimensionError):
        det.score_batch(wrong_width, np.zeros((2, 6)))


# ------------------------------------------------------------ mahalanobis


def test_mahalanobis_zero_at_class_means_negative_elsewhere():
    rng = np.random.default_rng(7)
    features = rng.normal(size=(90, 4))
    labels = np.repeat(np.arange(3), 30)
    features += labels[:, None] * 5.0
    det = MahalanobisDetector(features, labels, num_classes=3)
    # squared distances are nonnegative, so 0 is the best possible score
    # and is attained exactly at each class mean
    at_means = det.score_features(det.means)
    np.testing.assert_allclose(at_means, 0.0, atol=1e-20)
    away = det.score_features(det.means + 1.0)
    assert np.all(away < 0.0)


def test_mahalanobis_identity_covariance_matches_euclidean():
    # spherical unit-variance clusters: precision ~ I, so the score is
    # approximately minus the nearest squared euclidean distance
    rng = np.random.default_rng(8)
    n, d = 4000, 3
    labels = np.repeat(np.arange(2), n // 2)
    means = np.array([[10.0, 0.0, 0.0], [-10.0, 0.0, 0.0]])
    features = rng.normal(size=(n, d)) + means[labels]
    det = MahalanobisDetector(features, labels, num_classes=2)
    queries = rng.normal(size=(20, d)) * 2.0
    got = det.score_features(queries)
    d2 = np.stack([np.sum((queries - det.means[c]) ** 2, axis=1) for c in range(2)])
    expected = -d2.min(axis=0)
    np.testing.assert_allclose(got, expected, rtol=0.1)


def test_mahalanobis_manual_oracle():
    rng = np.random.default_rng(9)
    features = rng.normal(size=(40, 5))
    labels = rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]  # both classes present
    det = MahalanobisDetector(features, labels, num_classes=2, ridge_scale=1e-6)
    # independent recomputation
    d = 5
    means = np.stack([features[labels == c].mean(axis=0) for c in range(2)])
    cov = sum((features[labels == c] - means[c]).T @ (features[labels == c] - means[c])
              for c in range(2)) / 40
    precision = np.linalg.inv(cov + 1e-6 * np.trace(cov) / d * np.eye(d))
    queries = rng.normal(size=(7, 5))
    expected = -np.min(
        [np.einsum("nd,dk,nk->n", queries - means[c], precision, queries - means[c])
         for c in range(2)], axis=0)
    np.testing.assert_allclose(det.score_features(queries), expected, rtol=1e-10)


def test_mahalanobis_validation():
    features = np.random.default_rng(10).normal(size=(10, 3))
    labels = np.zeros(10, dtype=int)
    with pytest.raises(EmptyClassError):
        MahalanobisDetector(features, labels, num_classes=2)
    with pytest.raises(DimensionError):
        MahalanobisDetector(features, labels[:5], num_classes=1)
    with pytest.raises(ValidationError):
        MahalanobisDetector(features, labels, num_classes=0)
    det = MahalanobisDetector(features, labels, num_classes=1)
    with pytest.raises(DimensionError):
        det.score_features(np.zeros((2, 4)))


# -------------------------------------------------------------------- knn


def test_knn_duplicate_of_bank_scores_zero():
    rng = np.random.default_rng(11)
    bank = rng.normal(size=(25, 6))
    det = KnnDetector(bank, k=1)
    np.testing.assert_allclose(det.score_features(bank), 0.0, atol=1e-7)


def test_knn_kth_distance_hand_case():
    # bank of three unit vectors; query e0: normalized distances to
    # (e0, e1, e2) are (0, sqrt2, sqrt2)
    bank = np.eye(3)
    query = np.array([[1.0, 0.0, 0.0]])
    assert KnnDetector(bank, k=1).score_features(query)[0] == pytest.approx(0.0, abs=1e-12)
    assert KnnDetector(bank, k=2).score_features(query)[0] == pytest.approx(-np.sqrt(2.0))
    assert KnnDetector(bank, k=3).score_features(query)[0] == pytest.approx(-np.sqrt(2.0))


def test_knn_is_scale_invariant():
    rng = np.random.default_rng(12)
    bank = rng.normal(size=(30, 5))
    det = KnnDetector(bank, k=4)
    q = rng.normal(size=(8, 5))
    np.testing.assert_allclose(det.score_features(q), det.score_features(10.0 * q),
                               rtol=1e-10)


def test_knn_validation():
    bank = np.random.default_rng(13).normal(size=(10, 4))
    with pytest.raises(ValidationError):
        KnnDetector(bank, k=0)
    with pytest.raises(ValidationError):
        KnnDetector(bank, k=11)
    det = KnnDetector(bank, k=2)
    with pytest.raises(DimensionError):
        det.score_features(np.zeros((3, 5)))


# ------------------------------------------------------------------ react


def test_react_full_quantile_is_plain_energy_on_fit_data(relu_net):
    X = np.random.default_rng(14).normal(size=(30, 6))
    logits, penult = forward_batch(relu_net, X)
    det = ReactDetector(relu_net, penult, quantile=1.0)
    # clip = max activation seen, so nothing is clipped on the fit set
    np.testing.assert_allclose(det.score_batch(relu_net, X),
                               energy_score(logits), rtol=1e-12)


def test_react_clipping_changes_extreme_activations(relu_net):
    rng = np.random.default_rng(15)
    X = rng.normal(size=(30, 6))
    _, penult = forward_batch(relu_net, X)
    det = ReactDetector(relu_net, penult, quantile=0.5)
    X_loud = rng.normal(size=(10, 6)) * 50.0
    logits_loud, _ = forward_batch(relu_net, X_loud)
    clipped_scores = det.score_batch(relu_net, X_loud)
    assert not np.allclose(clipped_scores, energy_score(logits_loud))
    # clipping can only reduce relu activations, never increase them
    _, penult_loud = forward_batch(relu_net, X_loud)
    assert np.all(np.minimum(penult_loud, det.clip) <= penult_loud)


def test_react_validation(relu_net):
    feats = np.abs(np.random.default_rng(16).normal(size=(10, 12)))
    with pytest.raises(ValidationError):
        ReactDetector(relu_net, feats, quantile=0.0)
    with pytest.raises(ValidationError):
        ReactDetector(relu_net, feats, quantile=1.5)
    with pytest.raises(DimensionError):
        ReactDetector(relu_net, feats[:, :5], quantile=0.9)


# -------------------------------------------------------------------- nci


def test_nci_zero_at_feature_mean(linear_net):
    rng = np.random.default_rng(17)
    X = rng.normal(size=(40, 6))
    det = NciDetector(linear_net, X)  # linear net: penult == input
    score = det.score_batch(linear_net, X.mean(axis=0, keepdims=True))
    assert score[0] == pytest.approx(0.0, abs=1e-12)


def test_nci_manual_oracle(linear_net):
    rng = np.random.default_rng(18)
    X = rng.normal(size=(40, 6))
    det = NciDetector(linear_net, X)
    Q = rng.normal(size=(9, 6))
    logits, _ = forward_batch(linear_net, Q)
    W, _ = linear_net.group_params(linear_net.groups[-1])
    pred = logits.argmax(axis=1)
    expected = np.array([
        W[pred[i]] @ (Q[i] - X.mean(axis=0)) / np.linalg.norm(W[pred[i]])
        for i in range(9)
    ])
    np.testing.assert_allclose(det.score_batch(linear_net, Q), expected, rtol=1e-12)


def test_nci_validation(linear_net):
    with pytest.raises(DimensionError):
        NciDetector(linear_net, np.zeros((5, 4)))


# ------------------------------------------------------------------- rpca


def test_rpca_reconstruction_error_zero_and_one(linear_net):
    # fit on inputs confined to the span of (e0, e1) -> components are
    # that plane; in-plane offsets reconstruct exactly, orthogonal
    # offsets not at all
    rng = np.random.default_rng(19)
    X = np.zeros((50, 6))
    X[:, 0] = rng.normal(size=50) * 3.0
    X[:, 1] = rng.normal(size=50) * 1.5
    det = RevisitedPcaDetector(linear_net, X, retained=1.0)
    assert det.components.shape == (6, 2)
    in_plane = det.mu + np.array([[2.0, -1.0, 0.0, 0.0, 0.0, 0.0]])
    orthogonal = det.mu + np.array([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]])
    assert det.relative_reconstruction_error(in_plane)[0] == pytest.approx(0.0, abs=1e-10)
    assert det.relative_reconstruction_error(orthogonal)[0] == pytest.approx(1.0, rel=1e-10)
    # exactly at the mean the error is defined as zero
    assert det.relative_reconstruction_error(det.mu[None, :])[0] == 0.0


def test_rpca_retained_variance_truncates(linear_net):
    rng = np.random.default_rng(20)
    X = np.zeros((60, 6))
    X[:, 0] = rng.normal(size=60) * 10.0   # dominant direction
    X[:, 1] = rng.normal(size=60) * 0.01   # negligible variance
    det = RevisitedPcaDetector(linear_net, X, retained=0.9)
    assert det.components.shape[1] == 1


def test_rpca_score_combines_error_and_energy(linear_net):
    rng = np.random.default_rng(21)
    X = rng.normal(size=(50, 6))
    det = RevisitedPcaDetector(linear_net, X, retained=0.9)
    scores = det.score_batch(linear_net, X)
    logits, penult = forward_batch(linear_net, X)
    expected = (-det.relative_reconstruction_error(penult)
                + (energy_score(logits) - det.energy_mean) / det.energy_std)
    np.testing.assert_allclose(scores, expected, rtol=1e-12)


def test_rpca_validation(linear_net):
    X = np.random.default_rng(22).normal(size=(10, 6))
    with pytest.raises(ValidationError):
        RevisitedPcaDetector(linear_net, X, retained=0.0)
    det = RevisitedPcaDetector(linear_net, X)
    with pytest.raises(DimensionError):
        det.relative_reconstruction_error(np.zeros((2, 5)))


# ------------------------------------------------------------------- corp


def test_corp_random_features_approximate_gaussian_kernel():
    rng = np.random.default_rng(23)
    bank = rng.normal(size=(12, 8))
    gamma = 0.5
    det = CorpDetector(bank, n_features=4096, gamma=gamma, seed=3)
    # embed unit vectors directly from the fitted frequencies
    U = rng.normal(size=(10, 8))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    V = rng.normal(size=(10, 8))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    phi_u = np.sqrt(2.0 / det.n_features) * np.cos(U @ det.freqs + det.phases)
    phi_v = np.sqrt(2.0 / det.n_features) * np.cos(V @ det.freqs + det.phases)
    approx = np.sum(phi_u * phi_v, axis=1)
    exact = np.exp(-gamma * np.sum((U - V) ** 2, axis=1))
    assert np.max(np.abs(approx - exact)) <= 0.05


def test_corp_bank_rows_reconstruct_exactly_at_full_retention():
    rng = np.random.default_rng(24)
    bank = rng.normal(size=(20, 6))
    det = CorpDetector(bank, n_features=512, gamma=0.5, retained=1.0, seed=1)
    on_bank = det.score_features(bank)
    np.testing.assert_allclose(on_bank, 0.0, atol=1e-8)
    fresh = rng.normal(size=(10, 6))
    assert np.all(det.score_features(fresh) < -0.01)


def test_corp_is_deterministic_in_seed():
    bank = np.random.default_rng(25).normal(size=(15, 5))
    q = np.random.default_rng(26).normal(size=(6, 5))
    a = CorpDetector(bank, n_features=256, seed=9).score_features(q)
    b = CorpDetector(bank, n_features=256, seed=9).score_features(q)
    c = CorpDetector(bank, n_features=256, seed=10).score_features(q)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_corp_tiny_gamma_warns():
    bank = np.random.default_rng(27).normal(size=(10, 4))
    with pytest.warns(RuntimeWarning):
        CorpDetector(bank, n_features=64, gamma=1e-7)


def test_corp_validation():
    bank = np.random.default_rng(28).normal(size=(10, 4))
    with pytest.raises(ValidationError):
        CorpDetector(bank, n_features=0)
    with pytest.raises(ValidationError):
        CorpDetector(bank, gamma=0.0)
    with pytest.raises(ValidationError):
        CorpDetector(bank, retained=1.5)
    det = CorpDetector(bank, n_features=64)
    with pytest.raises(DimensionError):
        det.score_features(np.zeros((2, 5)))


# ------------------------------------------------ shared oriented semantics


def test_all_fitted_detectors_rank_id_above_far_ood(relu_net):
    # smoke ranking check: every fitted baseline gives higher mean score
    # to the data it was fitted on than to far-away inputs
    rng = np.random.default_rng(29)
    X_id = rng.normal(size=(60, 6))
    labels = rng.integers(0, 3, size=60)
    labels[:3] = [0, 1, 2]
    X_ood = rng.normal(size=(60, 6)) + 40.0
    _, penult = forward_batch(relu_net, X_id)
    detectors = [
        DiceDetector(relu_net, p=0.7),
        MahalanobisDetector(penult, labels, num_classes=3),
        KnnDetector(penult, k=5),
        ReactDetector(relu_net, penult, quantile=0.9),
        RevisitedPcaDetector(relu_net, X_id, retained=0.9),
        CorpDetector(penult, n_features=512, seed=0),
    ]
    for det in detectors:
        id_mean = det.score_batch(relu_net, X_id).mean()
        ood_mean = det.score_batch(relu_net, X_ood).mean()
        assert id_mean > ood_mean, det.name
