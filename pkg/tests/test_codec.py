import math

import numpy as np
import pytest

from cyldet import (
    BrnOutput,
    InsufficientData,
    NonPositiveDims,
    OutOfBounds,
    ProposalRegion,
    RotationBins,
    RpnOutput,
    SizeClusters,
    decode_location,
    decode_rotation,
    decode_size,
    encode_location,
    encode_rotation,
    encode_size,
    fit_size_clusters,
    load_size_clusters,
    objectness,
    save_size_clusters,
)
from oracles import exact_two_means


@pytest.fixture
def region():
    return ProposalRegion(center=(10.0, 1.0, 25.0), bounds=(2.0, 2.0, 2.0))


class TestLocationCodec:
    def test_zero_maps_to_center(self, region):
        np.testing.assert_allclose(decode_location((0, 0, 0), region),
                                   region.center)

    def test_analytic_sigmoid_point(self):
        region = ProposalRegion(center=(10.0, 0.0, 0.0), bounds=(2.0, 2.0, 2.0))
        decoded = decode_location((math.log(3.0), 0.0, 0.0), region)
        assert decoded[0] == pytest.approx(11.0, abs=1e-12)

    def test_saturation_stays_within_bounds(self, region):
        decoded = decode_location((40.0, -40.0, 40.0), region)
        assert decoded[0] == pytest.approx(region.center[0] + 2.0, abs=1e-6)
        assert decoded[1] == pytest.approx(region.center[1] - 2.0, abs=1e-6)
        off = np.abs(decoded - np.array(region.center))
        assert np.all(off <= np.array(region.bounds))

    def test_encode_center_is_zero(self, region):
        np.testing.assert_allclose(encode_location(region.center, region),
                                   [0, 0, 0], atol=1e-12)

    def test_encode_half_bound_is_log3(self, region):
        target = (region.center[0] + 1.0, region.center[1], region.center[2])
        t = encode_location(target, region)
        assert t[0] == pytest.approx(math.log(3.0), abs=1e-12)

    def test_boundary_excluded(self, region):
        target = (region.center[0] + 2.0, region.center[1], region.center[2])
        with pytest.raises(OutOfBounds):
            encode_location(target, region)

    def test_round_trips(self, region):
        rng = np.random.default_rng(0)
        for _ in range(200):
            target = np.array(region.center) + rng.uniform(-1, 1, 3) * 1.99
            t = encode_location(target, region)
            np.testing.assert_allclose(decode_location(t, region), target,
                                       atol=1e-9)
            np.testing.assert_allclose(
                encode_location(decode_location(t, region), region), t, atol=1e-9
            )

    def test_decoded_never_violates_bounds(self, region):
        rng = np.random.default_rng(1)
        t = rng.uniform(-100, 100, size=(1000, 3))
        for row in t:
            off = np.abs(decode_location(row, region) - np.array(region.center))
            assert np.all(off <= np.array(region.bounds) + 1e-12)


class TestRotationCodec:
    def test_winning_bin_center(self):
        bins = RotationBins(2)
        yaw = decode_rotation([5.0, 0.0], [0.0, 0.0], bins)
        assert yaw == pytest.approx(math.pi / 4)

    def test_round_trip(self):
        bins = RotationBins(8)
        logits, residuals = encode_rotation(1.0, bins)
        assert decode_rotation(logits, residuals, bins) == pytest.approx(
            1.0, abs=1e-9
        )

    def test_residual_wraps_into_half_turn(self):
        bins = RotationBins(2)
        raw = math.pi / 4 + math.pi / 2
        expected = raw % math.pi  # modular-arithmetic reference
        got = decode_rotation([5.0, 0.0], [math.pi / 2, 0.0], bins)
        assert got == pytest.approx(expected, abs=1e-12)
        big = decode_rotation([5.0, 0.0], [math.pi, 0.0], bins)
        assert big == pytest.approx((math.pi / 4 + math.pi) % math.pi, abs=1e-12)

    def test_heading_folds_before_encoding(self):
        bins = RotationBins(12)
        logits, residuals = encode_rotation(2.5 + math.pi, bins)
        assert decode_rotation(logits, residuals, bins) == pytest.approx(2.5)

    def test_logit_shift_invariance(self):
        bins = RotationBins(6)
        logits, residuals = encode_rotation(0.9, bins)
        shifted = np.asarray(logits) + 123.4
        assert decode_rotation(shifted, residuals, bins) == decode_rotation(
            logits, residuals, bins
        )

    def test_normalized_residual_mode(self):
        bins = RotationBins(8)
        logits, residuals = encode_rotation(1.1, bins, normalize_residual=True)
        assert abs(residuals[np.argmax(logits)]) <= 0.5 + 1e-12
        back = decode_rotation(logits, residuals, bins, normalize_residual=True)
        assert back == pytest.approx(1.1, abs=1e-9)

    def test_round_trip_many(self):
        bins = RotationBins(12)
        rng = np.random.default_rng(2)
        for yaw in rng.uniform(0, math.pi, size=200):
            logits, residuals = encode_rotation(yaw, bins)
            assert decode_rotation(logits, residuals, bins) == pytest.approx(
                yaw, abs=1e-9
            )


class TestSizeClusters:
    def test_single_cluster_is_mean(self):
        rng = np.random.default_rng(3)
        dims = rng.uniform(1.0, 5.0, size=(40, 3))
        clusters = fit_size_clusters(dims, 1, seed=0)
        np.testing.assert_allclose(clusters.centroids[0], dims.mean(axis=0),
                                   atol=1e-9)

    def test_two_separated_groups(self):
        rng = np.random.default_rng(4)
        group_a = np.array([1.5, 1.6, 3.9]) + 0.01 * rng.standard_normal((6, 3))
        group_b = np.array([3.0, 2.5, 10.0]) + 0.01 * rng.standard_normal((6, 3))
        data = np.vstack([group_a, group_b])
        clusters = fit_size_clusters(data, 2, seed=1)
        want, _ = exact_two_means(data)
        np.testing.assert_allclose(clusters.centroids, want, atol=1e-6)

    def test_insufficient_distinct_points(self):
        data = np.tile([[1.5, 1.6, 3.9]], (10, 1))
        with pytest.raises(InsufficientData):
            fit_size_clusters(data, 2, seed=0)

    def test_lloyd_sse_never_increases(self):
        rng = np.random.default_rng(5)
        dims = rng.uniform(1.0, 6.0, size=(100, 3))
        clusters = fit_size_clusters(dims, 4, seed=2)
        history = np.array(clusters.sse_history)
        assert np.all(np.diff(history) <= 1e-9)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(6)
        dims = rng.uniform(1.0, 6.0, size=(60, 3))
        a = fit_size_clusters(dims, 3, seed=7)
        b = fit_size_clusters(dims, 3, seed=7)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_accepts_labels(self):
        from cyldet.synthetic import make_frames

        labels = [lab for f in make_frames(4, seed=9) for lab in f.labels]
        clusters = fit_size_clusters(labels, 2, seed=0)
        assert clusters.centroids.shape == (2, 3)

    def test_persistence_round_trip(self, tmp_path):
        clusters = SizeClusters(np.array([[1.5, 1.6, 3.9], [1.8, 1.9, 4.6]]))
        path = tmp_path / "sizes.txt"
        save_size_clusters(clusters, path)
        loaded = load_size_clusters(path)
        np.testing.assert_array_equal(loaded.centroids, clusters.centroids)


class TestSizeCodec:
    clusters = SizeClusters(np.array([[1.4, 1.5, 3.4], [1.8, 1.9, 4.6]]))

    def test_zero_residuals_give_centroid(self):
        logits = np.array([0.0, 4.0])
        residuals = np.zeros((2, 3))
        np.testing.assert_array_equal(
            decode_size(logits, residuals, self.clusters),
            self.clusters.centroids[1],
        )

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            dims = rng.uniform(1.0, 5.0, size=3)
            logits, residuals = encode_size(dims, self.clusters)
            np.testing.assert_allclose(
                decode_size(logits, residuals, self.clusters), dims, atol=1e-9
            )

    def test_log_space_round_trip(self):
        dims = np.array([2.0, 1.7, 4.0])
        logits, residuals = encode_size(dims, self.clusters, log_space=True)
        np.testing.assert_allclose(
            decode_size(logits, residuals, self.clusters, log_space=True),
            dims, atol=1e-9,
        )

    def test_nearest_centroid_assignment(self):
        logits, _ = encode_size((1.41, 1.52, 3.38), self.clusters)
        assert np.argmax(logits) == 0
        logits, _ = encode_size((1.83, 1.88, 4.7), self.clusters)
        assert np.argmax(logits) == 1

    def test_non_positive_dims_rejected(self):
        logits = np.array([4.0, 0.0])
        residuals = np.zeros((2, 3))
        residuals[0] = -self.clusters.centroids[0]
        with pytest.raises(NonPositiveDims):
            decode_size(logits, residuals, self.clusters)


class TestObjectness:
    def test_midpoint(self):
        assert objectness(0.0) == 0.5

    def test_analytic(self):
        assert objectness(math.log(3.0)) == pytest.approx(0.75, abs=1e-12)

    def test_saturation(self):
        assert objectness(-40.0) < 1e-17
        assert objectness(40.0) >= 1.0 - 1e-15


class TestHeadOutputArity:
    def test_rpn(self):
        assert RpnOutput(t_loc=(0, 0, 0), t_obj=0.0).arity == 4

    def test_brn_matches_bin_and_cluster_counts(self):
        n_r, n_c = 12, 3
        out = BrnOutput(
            t_loc=(0, 0, 0),
            rot_logits=np.zeros(n_r),
            rot_residuals=np.zeros(n_r),
            size_logits=np.zeros(n_c),
            size_residuals=np.zeros((n_c, 3)),
        )
        assert out.arity == 3 + 2 * n_r + 4 * n_c

    def test_mismatched_encodings_rejected(self):
        with pytest.raises(ValueError):
            BrnOutput(
                t_loc=(0, 0, 0),
                rot_logits=np.zeros(4),
                rot_residuals=np.zeros(5),
                size_logits=np.zeros(2),
                size_residuals=np.zeros((2, 3)),
            )


class TestProposalRegion:
    def test_validation(self):
        with pytest.raises(ValueError):
            ProposalRegion(center=(0, 0, 0), radius=0.0)
        with pytest.raises(ValueError):
            ProposalRegion(center=(0, 0, 0), bounds=(1.0, -1.0, 1.0))
        with pytest.raises(ValueError):
            ProposalRegion(center=(0, 0, 0), y_extent=(2.0, 1.0))

    def test_recenter_preserves_shape(self):
        region = ProposalRegion(center=(1, 2, 3), radius=1.5,
                                y_extent=(-0.5, 2.5), bounds=(1, 2, 3))
        moved = region.recentered((9, 9, 9))
        assert moved.center == (9.0, 9.0, 9.0)
        assert moved.radius == region.radius
        assert moved.y_extent == region.y_extent
        assert moved.bounds == region.bounds
