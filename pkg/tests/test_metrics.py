import itertools
import math

import numpy as np
import pytest

from src.errors import ContractError, LabelError, NumericError
from src.metrics import (
    FeatureExtractor,
    MetricsReport,
    SampleSets,
    apc,
    auction_assignment,
    chamfer,
    coverage,
    distance_matrix,
    emd,
    emd_with_info,
    evaluate,
    evaluate_class,
    fpd,
    frechet_distance,
    intensity_features,
    js_divergence,
    jsd,
    kpd,
    kpd_from_features,
    one_nna,
    rectangular_emd,
    train_feature_extractor,
)
from src.metrics.distributions import fpd_from_features, mmd2_unbiased
from src.metrics.sets import coverage_from_matrix, one_nna_from_matrices
from src.models import PointSet

from .conftest import random_points


def naive_sq(a, b, channels):
    total = 0.0
    for c in range(channels):
        d = a[c] - b[c]
        total = total + d * d
    return total


def naive_chamfer(X, Y, channels=3):
    fwd = 0.0
    for x in X:
        fwd += min(naive_sq(x, y, channels) for y in Y)
    bwd = 0.0
    for y in Y:
        bwd += min(naive_sq(y, x, channels) for x in X)
    return fwd + bwd


def brute_emd(X, Y, channels=3):
    n = len(X)
    cost = [[math.sqrt(naive_sq(X[i], Y[j], channels)) for j in range(n)] for i in range(n)]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i in range(n):
            total += cost[i][perm[i]]
        best = min(best, total)
    return best


def brute_coverage(D_gr):
    matched = set()
    for j in range(D_gr.shape[0]):
        best = min(range(D_gr.shape[1]), key=lambda i: (D_gr[j, i], i))
        matched.add(best)
    return len(matched) / D_gr.shape[1]


def brute_nna(items, source, dist):
    correct = 0
    for i in range(len(items)):
        best = None
        for j in range(len(items)):
            if i == j:
                continue
            if best is None or dist(i, j) < dist(i, best):
                best = j
        correct += source[best] == source[i]
    return correct / len(items)


class TestChamfer:
    def test_indexed_equals_naive(self, rng):
        for _ in range(10):
            X, Y = rng.normal(size=(50, 4)), rng.normal(size=(50, 4))
            for channels in (3, 4):
                assert chamfer(X, Y, channels) == naive_chamfer(X, Y, channels)

    def test_identical_sets(self, rng):
        X = random_points(rng, 30)
        assert chamfer(X, X) == 0.0

    def test_per_point_mean(self, rng):
        X, Y = rng.normal(size=(10, 4)), rng.normal(size=(20, 4))
        per_point = chamfer(X, Y, per_point=True)
        fwd = sum(min(naive_sq(x, y, 3) for y in Y) for x in X) / 10
        bwd = sum(min(naive_sq(y, x, 3) for x in X) for y in Y) / 20
        assert per_point == pytest.approx(fwd + bwd)

    def test_single_points(self):
        assert chamfer(np.array([[0.0, 0, 0, 0]]), np.array([[3.0, 4, 0, 0]])) == 50.0


class TestEMD:
    def test_matches_permutation_minimum(self, rng):
        for trial in range(200):
            n = int(rng.integers(1, 7))
            X, Y = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))
            channels = 3 if trial % 2 else 4
            assert emd(X, Y, channels) == pytest.approx(brute_emd(X, Y, channels), rel=1e-12, abs=1e-12)

    def test_unequal_sizes(self, rng):
        with pytest.raises(ContractError):
            emd(rng.normal(size=(3, 4)), rng.normal(size=(4, 4)))

    def test_auction_close_to_exact(self, rng):
        X, Y = rng.normal(size=(40, 4)), rng.normal(size=(40, 4))
        exact, approx_flag = emd_with_info(X, Y)
        approx, flagged = emd_with_info(X, Y, exact_limit=10)
        assert not approx_flag and flagged
        assert exact - 1e-9 <= approx <= exact * (1 + 1e-3)

    def test_auction_is_permutation(self, rng):
        cols = auction_assignment(rng.uniform(size=(12, 12)))
        assert sorted(cols.tolist()) == list(range(12))

    def test_rectangular(self, rng):
        X = rng.normal(size=(3, 4))
        Y = np.vstack([X, rng.normal(size=(2, 4)) + 50.0])
        assert rectangular_emd(X, Y) == pytest.approx(0.0, abs=1e-12)

    def test_rectangular_uses_emd_units(self):
        xyz = np.column_stack([10.0 * np.arange(10), np.zeros(10), np.zeros(10), np.zeros(10)])
        a = PointSet(xyz)
        same_n = PointSet(xyz + np.array([0.0, 0.0, 1.0, 0.0]))
        fewer = PointSet(same_n.points[:9])
        summed = distance_matrix([a], [same_n, fewer], "emd", 3, per_point=False)
        np.testing.assert_allclose(summed, [[10.0, 9.0]], rtol=1e-12)
        averaged = distance_matrix([a], [same_n, fewer], "emd", 3, per_point=True)
        np.testing.assert_allclose(averaged, [[1.0, 1.0]], rtol=1e-12)
        assert rectangular_emd(a, same_n, per_point=False) == pytest.approx(emd(a, same_n))

    def test_symmetric(self, rng):
        for _ in range(10):
            X, Y = rng.normal(size=(7, 4)), rng.normal(size=(7, 4))
            assert chamfer(X, Y) == chamfer(Y, X)
            assert emd(X, Y) == pytest.approx(emd(Y, X), rel=1e-12)


class TestSetMetrics:
    def _sets(self, rng, size=8):
        real = [random_points(rng, int(rng.integers(5, 9))) for _ in range(size)]
        gen = [random_points(rng, int(rng.integers(5, 9))) for _ in range(size)]
        return SampleSets(real, gen)

    def test_coverage_brute_force(self, rng):
        for _ in range(5):
            sets = self._sets(rng)
            D_gr = np.array([[chamfer(g, r, per_point=True) for r in sets.real] for g in sets.generated])
            assert coverage(sets, "cd") == brute_coverage(D_gr)

    def test_one_nna_brute_force(self, rng):
        for _ in range(5):
            sets = self._sets(rng)
            items = sets.generated + sets.real
            source = [0] * 8 + [1] * 8
            dist = lambda i, j: chamfer(items[i], items[j], per_point=True)  # noqa: E731
            assert one_nna(sets, "cd") == brute_nna(items, source, dist)

    def test_identical_sets_are_indistinguishable(self, rng):
        real = [random_points(rng, 6) for _ in range(8)]
        D = np.array([[chamfer(a, b, per_point=True) for b in real] for a in real])
        value, ties = one_nna_from_matrices(D, D, D)
        assert value == 0.0
        assert ties == 16

    def test_collapsed_far_generator(self, rng):
        real = [random_points(rng, 6) for _ in range(8)]
        far = PointSet(real[0].points + np.array([100.0, 0, 0, 0]))
        sets = SampleSets(real, [far] * 8)
        assert one_nna(sets, "cd") == 1.0
        assert coverage(sets, "cd") == 1.0 / 8

    def test_iid_sets_near_chance(self):
        rng = np.random.default_rng(0)
        g, r = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))

        def dist(a, b):
            return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))

        value, _ = one_nna_from_matrices(dist(g, g), dist(g, r), dist(r, r))
        assert 0.4 <= value <= 0.6

    def test_coverage_tie_goes_to_lower_index(self):
        assert coverage_from_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])) == 0.5

    def test_threaded_matrix_identical(self, rng):
        sets = self._sets(rng)
        serial = distance_matrix(sets.generated, sets.real, "emd", threads=1)
        threaded = distance_matrix(sets.generated, sets.real, "emd", threads=4)
        np.testing.assert_array_equal(serial, threaded)

    def test_threaded_flags_match_serial(self, rng):
        sets = self._sets(rng)
        serial_flags, threaded_flags = {}, {}
        serial = distance_matrix(sets.generated, sets.real, "emd", threads=1, flags=serial_flags)
        threaded = distance_matrix(sets.generated, sets.real, "emd", threads=4, flags=threaded_flags)
        np.testing.assert_array_equal(serial, threaded)
        assert serial_flags == threaded_flags
        mixed = sum(g.n != r.n for g in sets.generated for r in sets.real)
        assert serial_flags.get("emd_rectangular", 0) == mixed

    def test_coverage_grows_with_generated_sets(self, rng):
        for _ in range(20):
            D_gr = rng.uniform(size=(4, 6))
            extra = rng.uniform(size=(3, 6))
            assert coverage_from_matrix(np.vstack([D_gr, extra])) >= coverage_from_matrix(D_gr)

    def test_rectangular_emd_flagged(self, rng):
        flags = {}
        A = [random_points(rng, 5)]
        B = [random_points(rng, 7)]
        distance_matrix(A, B, "emd", flags=flags)
        assert flags["emd_rectangular"] == 1

    def test_size_mismatch(self, rng):
        with pytest.raises(ContractError):
            SampleSets([random_points(rng, 4)], [])

    def test_unknown_metric(self, rng):
        sets = self._sets(rng, size=2)
        with pytest.raises(ContractError):
            coverage(sets, "hausdorff")


class TestIntensityHistogram:
    def test_normalized(self, rng):
        h = intensity_features(random_points(rng, 100))
        assert h.shape == (256,)
        assert h.sum() == pytest.approx(1.0)

    def test_edges(self):
        h = intensity_features(PointSet([[0, 0, 0, 0.0], [0, 0, 0, 1.0]]))
        assert h[0] == 0.5 and h[-1] == 0.5


class TestDistributions:
    def test_frechet_identical(self, rng):
        feats = rng.normal(size=(200, 5))
        mu, sigma = feats.mean(axis=0), np.cov(feats, rowvar=False)
        value, ridged = frechet_distance(mu, sigma, mu, sigma)
        assert value == pytest.approx(0.0, abs=1e-8)
        assert not ridged

    def test_frechet_one_dimensional(self):
        value, _ = frechet_distance(np.array([0.0]), np.array([[1.0]]), np.array([3.0]), np.array([[4.0]]))
        assert value == pytest.approx(9.0 + 1.0 + 4.0 - 2.0 * 2.0)

    def test_singular_covariance_ridge(self):
        sigma = np.diag([1.0, 0.0])
        value, ridged = frechet_distance(np.zeros(2), sigma, np.ones(2), sigma)
        assert ridged
        assert value == pytest.approx(2.0, abs=1e-5)
        with pytest.raises(NumericError):
            frechet_distance(np.zeros(2), sigma, np.ones(2), sigma, ridge=False)

    def test_fpd_translated_features(self, rng):
        x = rng.normal(size=(300, 4))
        same, _ = fpd_from_features(x, x)
        shifted, _ = fpd_from_features(x, x + 1.0)
        assert same == pytest.approx(0.0, abs=1e-8)
        assert shifted == pytest.approx(4.0, rel=1e-6)

    def test_fpd_needs_two(self, rng):
        with pytest.raises(ContractError):
            fpd_from_features(rng.normal(size=(1, 4)), rng.normal(size=(5, 4)))

    def test_mmd_same_distribution_near_zero(self, rng):
        x, y = rng.normal(size=(300, 8)), rng.normal(size=(300, 8))
        value, stderr = kpd_from_features(x, y)
        assert abs(value) < 4 * stderr

    def test_mmd_shifted_positive(self, rng):
        x, y = rng.normal(size=(100, 8)), rng.normal(size=(100, 8)) + 2.0
        assert mmd2_unbiased(x, y) > 0.5

    def test_kpd_blocks(self, rng):
        x, y = rng.normal(size=(50, 4)), rng.normal(size=(50, 4))
        value, stderr = kpd_from_features(x, y, max_block_size=20)
        assert np.isfinite(value) and np.isfinite(stderr)

    def test_js_divergence_bounds(self):
        p = np.array([1.0, 0.0, 0.0])
        assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-9)
        assert js_divergence(p, np.array([0.0, 0.0, 1.0])) == pytest.approx(1.0, abs=1e-6)

    def test_jsd_identical_sets(self, rng):
        objs = [random_points(rng, 30) for _ in range(4)]
        assert jsd(objs, objs) == pytest.approx(0.0, abs=1e-9)

    def test_frechet_diagonal_closed_form(self):
        k, a, b = 4, 2.0, 0.5
        value, ridged = frechet_distance(np.zeros(k), a * np.eye(k), np.zeros(k), b * np.eye(k))
        assert not ridged
        assert value == pytest.approx(k * (math.sqrt(a) - math.sqrt(b)) ** 2, rel=1e-10)

    def test_mmd_two_by_two_by_hand(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([[1.0, 1.0], [0.0, 0.0]])
        # k(u, v) = (u.v / 2 + 1)^3: 같은 집합의 쌍은 내적 0, 교차 쌍 두 개는 내적 1
        k_xy = (2 * 1.5**3 + 2 * 1.0) / 4
        assert mmd2_unbiased(x, y) == pytest.approx(1.0 + 1.0 - 2.0 * k_xy)

    def test_kpd_not_scale_invariant(self, rng):
        x, y = rng.normal(size=(40, 4)), rng.normal(size=(40, 4)) + 0.5
        plain, _ = kpd_from_features(x, y)
        scaled, _ = kpd_from_features(2.0 * x, 2.0 * y)
        assert scaled != pytest.approx(plain, rel=1e-3)

    def test_js_divergence_hand_example(self):
        expected = 0.5 * math.log2(1 / 0.75) + 0.5 * (0.5 * math.log2(0.5 / 0.75) + 0.5 * math.log2(0.5 / 0.25))
        assert js_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(expected, abs=1e-8)

    def test_fpd_kpd_from_point_sets(self, synthetic_dataset, extractor):
        real = [s.points for s in synthetic_dataset.objects(split="train", cls="vehicle")]
        generated = [PointSet(p.points + np.array([0.3, 0.0, 0.0, 0.0])) for p in real]
        same, ridged = fpd(real, real, extractor, 4)
        assert same == pytest.approx(0.0, abs=1e-3)
        # 특징 폭 64 > 객체 수 이므로 공분산은 특이 행렬
        assert ridged
        value, _ = fpd(real, generated, extractor, 3)
        expected, _ = fpd_from_features(extractor.features(real, 3), extractor.features(generated, 3))
        assert value == expected
        kpd_value, stderr = kpd(real, generated, extractor, 4)
        assert np.isfinite(kpd_value) and np.isfinite(stderr) and stderr >= 0.0


class TestFeatureExtractor:
    def test_feature_shape(self, rng):
        extractor = FeatureExtractor.initialize(["vehicle", "post"])
        feats = extractor.features([random_points(rng, 10), random_points(rng, 3)], channels=3)
        assert feats.shape == (2, 64)

    def test_apc_sums_to_one_over_labels(self, rng):
        classes = ["vehicle", "post", "bike", "barrier"]
        extractor = FeatureExtractor.initialize(classes, seed=3)
        objs = [random_points(rng, 12) for _ in range(10)]
        total = sum(apc(objs, extractor, [c] * len(objs)) for c in classes)
        assert total == pytest.approx(1.0)

    def test_save_load(self, tmp_path, rng):
        extractor = FeatureExtractor.initialize(["vehicle", "post"], seed=1)
        extractor.save(tmp_path / "fx.ckpt")
        loaded = FeatureExtractor.load(tmp_path / "fx.ckpt")
        objs = [random_points(rng, 8)]
        np.testing.assert_array_equal(loaded.features(objs), extractor.features(objs))
        assert loaded.checkpoint_id == extractor.checkpoint_id

    def test_training_moves_weights(self, synthetic_dataset, extractor):
        untrained = FeatureExtractor.initialize(synthetic_dataset.classes, seed=0)
        assert extractor.checkpoint_id != untrained.checkpoint_id
        assert extractor.classes == list(synthetic_dataset.classes)

    def test_unknown_label(self, extractor, rng):
        with pytest.raises(LabelError):
            extractor.accuracy([random_points(rng, 5)], ["tree"])

    @pytest.mark.slow
    def test_classifies_synthetic_classes(self, synthetic_dataset):
        train = synthetic_dataset.objects(split="train")
        trained = train_feature_extractor(train, synthetic_dataset.classes, epochs=60, seed=0)
        accuracy = trained.accuracy([s.points for s in train], [s.cls for s in train], channels=4)
        assert accuracy > 0.5


class TestReport:
    def test_evaluate_synthetic(self, synthetic_dataset, extractor, tmp_path):
        train = synthetic_dataset.objects(split="train", cls="vehicle")
        real = [s.points for s in train]
        generated = [PointSet(p.points + np.array([0.05, 0.0, 0.0, 0.0])) for p in real]
        report = evaluate({"vehicle": real}, {"vehicle": generated}, extractor)
        values = report.per_class["vehicle"]
        assert 0.0 < values["cd"] <= 2 * 0.05**2 + 1e-12
        assert 0.0 <= values["cov_cd"] <= 1.0
        assert values["apc"] is not None
        assert report.metadata["feature_checkpoint"] == extractor.checkpoint_id
        assert np.isfinite(report.metadata["extras"]["vehicle"]["kpd_4ch_stderr"])
        assert report.metadata["flags"]["vehicle"]["fpd_4ch_ridge"] == 1

        path = report.save(tmp_path / "metrics.json")
        loaded = MetricsReport.load(path)
        assert loaded.per_class["vehicle"]["cd"] == values["cd"]
        assert "vehicle" in report.render_text()

    def test_evaluate_without_extractor(self, rng):
        real = [random_points(rng, 6) for _ in range(3)]
        report = evaluate({"post": real}, {"post": [PointSet(p.points) for p in real]}, None)
        values = report.per_class["post"]
        assert values["cd"] == 0.0 and values["emd"] == 0.0
        assert values["fpd_3ch"] is None and values["apc"] is None

    def test_class_mismatch(self, rng):
        with pytest.raises(ContractError):
            evaluate({"post": [random_points(rng, 3)]}, {"bike": [random_points(rng, 3)]}, None)

    @pytest.mark.parametrize("per_point", [True, False])
    def test_mismatched_point_counts(self, rng, per_point):
        real = [random_points(rng, 6), random_points(rng, 8)]
        generated = [random_points(rng, 4), PointSet(real[1].points)]
        result = evaluate_class(real, generated, "post", None, per_point=per_point)
        first = rectangular_emd(real[0], generated[0], per_point=per_point)
        assert result["values"]["emd"] == pytest.approx(first / 2)
        assert result["flags"]["emd_rectangular_pairs"] == 1
        assert np.isfinite(result["values"]["cd"])


@pytest.mark.slow
def test_calibration_on_synthetic_halves(tmp_path, extractor):
    """같은 클래스의 서로 겹치지 않는 두 절반은 구분되지 않아야 한다"""
    from src.config import ScannerSpec
    from src.dataset import load_dataset
    from src.generators.scanner import make_dataset

    path = make_dataset(["vehicle", "post"], {"vehicle": 400, "post": 200}, ScannerSpec(), seed=11, output_dir=tmp_path / "d")
    data = load_dataset(path)
    vehicles = [s.points for s in data.objects(cls="vehicle")]
    posts = [s.points for s in data.objects(cls="post")]
    a, b = vehicles[:200], vehicles[200:]

    assert 0.40 <= one_nna(SampleSets(a, b), "cd") <= 0.60

    f_a, f_b, f_p = (extractor.features(x, 4) for x in (a, b, posts))
    value, stderr = kpd_from_features(f_a, f_b)
    assert abs(value) <= 3 * stderr
    same, _ = fpd_from_features(f_a, f_b)
    other, _ = fpd_from_features(f_a, f_p)
    assert same < 0.1 * other
