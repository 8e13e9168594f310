"""Unit tests for src/dynsal/metrics/scores.py.

Run with: python -m pytest tests/metrics/test_scores.py -v
"""
from __future__ import annotations

import numpy as np
import pytest

from dynsal.data import FixationRecord
from dynsal.errors import DataError, DegenerateMapError, DimensionError, NoFixationError, UsageError
from dynsal.metrics import auc_judd, cc_metric, center_bias_map, nss_metric, pair_auc, shuffled_auc, sim_metric
from dynsal.tensor import Tensor


def pairwise_auc(pos, neg):
    hits = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return hits / (len(pos) * len(neg))


def random_fixations(rng, shape, count):
    p = np.zeros(shape)
    p.flat[rng.choice(p.size, size=count, replace=False)] = 1.0
    return p


# ---------------------------------------------------------------------------
# AUC-Judd
# ---------------------------------------------------------------------------

class TestAUCJudd:
    Y = np.array([[0.1, 0.9], [0.2, 0.8]])

    def test_perfect_separation(self):
        P = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert auc_judd(self.Y, P) == 1.0
        assert auc_judd(self.Y, P, thresholds="fixated") == pytest.approx(1.0)

    def test_positive_below_every_negative(self):
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert auc_judd(self.Y, P) == 0.0

    def test_matches_pair_counting(self, rng):
        Y = rng.random((8, 8))
        P = random_fixations(rng, (8, 8), 6)
        expected = pairwise_auc(Y[P > 0], Y[P == 0])
        assert auc_judd(Y, P) == pytest.approx(expected, abs=1e-9)

    def test_ties_count_one_half(self):
        Y = np.array([[0.5, 0.5], [0.5, 0.5]])
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert auc_judd(Y, P) == 0.5

    def test_invariant_under_increasing_transform(self, rng):
        Y = rng.random((6, 6))
        P = random_fixations(rng, (6, 6), 5)
        assert auc_judd(np.exp(3 * Y) - 2, P) == pytest.approx(auc_judd(Y, P), abs=1e-9)

    def test_negation_complements(self, rng):
        Y = rng.random((6, 6))
        P = random_fixations(rng, (6, 6), 5)
        assert auc_judd(Y, P) + auc_judd(-Y, P) == pytest.approx(1.0, abs=1e-9)

    def test_fixated_thresholds_on_separable_map(self, rng):
        Y = rng.random((5, 5))
        P = (Y >= np.sort(Y.ravel())[-5]).astype(float)
        assert auc_judd(Y, P, thresholds="fixated") == pytest.approx(1.0)

    def test_fixated_thresholds_credit_low_positive_with_one_half(self):
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert auc_judd(self.Y, P, thresholds="fixated") == pytest.approx(0.5)

    def test_accepts_tensor_and_channel_maps(self):
        P = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert auc_judd(Tensor(self.Y[..., None]), P[..., None]) == 1.0

    def test_no_fixations(self):
        with pytest.raises(NoFixationError):
            auc_judd(self.Y, np.zeros((2, 2)))

    def test_all_cells_fixated(self):
        with pytest.raises(DegenerateMapError):
            auc_judd(self.Y, np.ones((2, 2)))

    def test_unknown_threshold_mode(self):
        with pytest.raises(UsageError):
            auc_judd(self.Y, np.array([[0.0, 1.0], [0.0, 0.0]]), thresholds="borji")

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            auc_judd(self.Y, np.zeros((3, 3)))


class TestPairAUC:
    def test_matches_loop(self, rng):
        pos, neg = rng.integers(0, 5, size=7).astype(float), rng.integers(0, 5, size=9).astype(float)
        assert pair_auc(pos, neg) == pytest.approx(pairwise_auc(pos, neg), abs=1e-12)


# ---------------------------------------------------------------------------
# Shuffled AUC
# ---------------------------------------------------------------------------

class TestShuffledAUC:
    def test_pool_equal_to_positives_gives_one_half(self, rng):
        Y = rng.random((8, 8))
        P = random_fixations(rng, (8, 8), 10)
        assert shuffled_auc(Y, P, P, splits=100, rng_seed=3) == pytest.approx(0.5, abs=0.05)

    def test_perfect_separation(self, rng):
        P = random_fixations(rng, (8, 8), 5)
        pool = random_fixations(rng, (8, 8), 20) * (1 - P)
        assert shuffled_auc(P.copy(), P, pool, splits=10) == 1.0

    def test_matches_per_split_oracle(self, rng):
        Y = rng.random((10, 10))
        P = random_fixations(rng, (10, 10), 4)
        pool_map = random_fixations(rng, (10, 10), 30)
        positives, pool = Y[P > 0], Y[pool_map > 0]
        draws = np.random.default_rng(17)
        expected = np.mean([
            pairwise_auc(positives, pool[draws.choice(pool.size, size=4, replace=False)])
            for _ in range(5)
        ])
        assert shuffled_auc(Y, P, pool_map, splits=5, rng_seed=17) == pytest.approx(expected, abs=1e-9)

    def test_small_pool_uses_every_negative(self, rng):
        Y = rng.random((6, 6))
        P = random_fixations(rng, (6, 6), 8)
        pool_map = random_fixations(rng, (6, 6), 3)
        expected = pairwise_auc(Y[P > 0], Y[pool_map > 0])
        assert shuffled_auc(Y, P, pool_map, splits=4, rng_seed=1) == pytest.approx(expected, abs=1e-12)

    def test_seeded(self, rng):
        Y = rng.random((8, 8))
        P = random_fixations(rng, (8, 8), 3)
        pool = random_fixations(rng, (8, 8), 40)
        assert shuffled_auc(Y, P, pool, rng_seed=9) == shuffled_auc(Y, P, pool, rng_seed=9)

    def test_empty_pool(self, rng):
        with pytest.raises(DataError, match="empty negative pool"):
            shuffled_auc(rng.random((4, 4)), random_fixations(rng, (4, 4), 2), np.zeros((4, 4)))

    def test_splits_must_be_positive(self, rng):
        P = random_fixations(rng, (4, 4), 2)
        with pytest.raises(UsageError):
            shuffled_auc(rng.random((4, 4)), P, P, splits=0)

    def test_pool_shape(self, rng):
        P = random_fixations(rng, (4, 4), 2)
        with pytest.raises(DimensionError):
            shuffled_auc(rng.random((4, 4)), P, np.ones((2, 2)))


# ---------------------------------------------------------------------------
# NSS, CC, SIM
# ---------------------------------------------------------------------------

class TestNSSMetric:
    def test_worked_example(self):
        Y = np.array([[1.0, 2.0], [3.0, 4.0]])
        P = np.array([[0.0, 0.0], [0.0, 1.0]])
        assert nss_metric(Y, P) == pytest.approx(1.5 / np.sqrt(1.25), abs=1e-12)

    def test_every_cell_fixated_gives_zero(self, rng):
        assert nss_metric(rng.random((5, 5)), np.ones((5, 5))) == pytest.approx(0.0, abs=1e-9)

    def test_affine_invariance(self, rng):
        Y = rng.random((6, 6))
        P = random_fixations(rng, (6, 6), 4)
        assert nss_metric(2.5 * Y + 4, P) == pytest.approx(nss_metric(Y, P), abs=1e-9)

    def test_constant_map(self):
        with pytest.raises(DegenerateMapError):
            nss_metric(np.ones((3, 3)), np.eye(3))

    def test_no_fixations(self, rng):
        with pytest.raises(NoFixationError):
            nss_metric(rng.random((3, 3)), np.zeros((3, 3)))


class TestCCMetric:
    def test_self_correlation(self, rng):
        Q = rng.random((6, 6))
        assert cc_metric(Q, Q) == pytest.approx(1.0, abs=1e-12)

    def test_matches_corrcoef(self, rng):
        Y, Q = rng.random((7, 5)), rng.random((7, 5))
        assert cc_metric(Y, Q) == pytest.approx(np.corrcoef(Y.ravel(), Q.ravel())[0, 1], abs=1e-9)

    def test_affine_invariance(self, rng):
        Y, Q = rng.random((4, 4)), rng.random((4, 4))
        assert cc_metric(0.5 * Y - 1, Q) == pytest.approx(cc_metric(Y, Q), abs=1e-9)

    def test_constant_ground_truth(self, rng):
        with pytest.raises(DegenerateMapError, match="ground truth"):
            cc_metric(rng.random((3, 3)), np.full((3, 3), 0.1))


class TestSIMMetric:
    def test_identical(self, rng):
        Q = rng.random((6, 6))
        assert sim_metric(Q, Q) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_support(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 0.0], [0.0, 2.0]])
        assert sim_metric(a, b) == 0.0

    def test_matches_min_sum(self, rng):
        Y, Q = rng.random((5, 5)), rng.random((5, 5))
        y, q = Y / Y.sum(), Q / Q.sum()
        expected = sum(min(a, b) for a, b in zip(y.ravel(), q.ravel()))
        assert sim_metric(Y, Q) == pytest.approx(expected, abs=1e-12)
        assert sim_metric(Q, Y) == pytest.approx(expected, abs=1e-12)

    def test_negative_values(self):
        with pytest.raises(DataError):
            sim_metric(-np.ones((2, 2)), np.ones((2, 2)))

    def test_no_mass(self):
        with pytest.raises(DegenerateMapError):
            sim_metric(np.zeros((2, 2)), np.ones((2, 2)))


# ---------------------------------------------------------------------------
# Center bias
# ---------------------------------------------------------------------------

def dense_center_bias(records, size, sigma):
    height, width = size
    ys, xs = np.mgrid[0:height, 0:width]
    total = np.zeros(size)
    for r in records:
        d2 = (xs - r.x) ** 2 + (ys - r.y) ** 2
        total += np.where(d2 <= (4 * sigma) ** 2, np.exp(-d2 / (2 * sigma ** 2)), 0.0)
    return total / total.max()


class TestCenterBias:
    def test_single_central_fixation_is_symmetric_peak(self):
        cb = center_bias_map([FixationRecord("v", 0, "a", 10, 10)], (21, 21), sigma=3.0)
        assert cb[10, 10] == 1.0
        np.testing.assert_allclose(cb, cb[::-1, :], atol=1e-12)
        np.testing.assert_allclose(cb, cb[:, ::-1], atol=1e-12)
        np.testing.assert_allclose(cb, cb.T, atol=1e-12)

    def test_mirror_fixations_give_mirror_map(self):
        records = [FixationRecord("v", 0, "a", 3, 5), FixationRecord("v", 1, "a", 12, 5)]
        cb = center_bias_map(records, (10, 16), sigma=2.0)
        np.testing.assert_allclose(cb, cb[:, ::-1], atol=1e-9)

    def test_matches_dense_accumulation(self, rng):
        records = [
            FixationRecord("v", int(t), "a", int(x), int(y))
            for t, x, y in zip(range(25), rng.integers(0, 32, 25), rng.integers(0, 24, 25))
        ]
        cb = center_bias_map(records, (24, 32), sigma=1.5)
        np.testing.assert_allclose(cb, dense_center_bias(records, (24, 32), 1.5), atol=1e-12)
        assert cb.max() == 1.0

    def test_default_sigma(self):
        records = [FixationRecord("v", 0, "a", 16, 16)]
        np.testing.assert_allclose(center_bias_map(records, (32, 32)), center_bias_map(records, (32, 32), sigma=1.0))

    def test_needs_records(self):
        with pytest.raises(NoFixationError):
            center_bias_map([], (4, 4))

    def test_out_of_frame(self):
        with pytest.raises(DataError):
            center_bias_map([FixationRecord("v", 0, "a", 4, 0)], (4, 4))
