import math
from pathlib import Path

import numpy as np
import pytest

from ictlab.data import (
    CsvSchema,
    Dataset,
    SchemaError,
    SplitSpec,
    batches,
    cycle_batches,
    export_csv,
    gaussian_clusters,
    ingest_csv,
    moon_point,
    split,
    standardize,
    two_moons,
)

FIXTURES = Path(__file__).parent / "fixtures"


class TestTwoMoons:
    def test_closed_form_points(self):
        assert moon_point(0.0, 0) == (1.0, 0.0)
        x, y = moon_point(math.pi / 2, 1)
        assert x == pytest.approx(1.0, abs=1e-15) and y == pytest.approx(-0.5, abs=1e-15)

    def test_noise_free_generator_hits_endpoints(self):
        ds = two_moons(11, 0.0, seed=3)
        upper = ds.inputs[ds.labels == 0]
        lower = ds.inputs[ds.labels == 1]
        assert any(np.array_equal(p, [1.0, 0.0]) for p in upper)
        # 5 lower points: phi = 0, pi/4, pi/2, ... hits (1, -0.5)
        assert np.min(np.abs(lower - [1.0, -0.5]).sum(axis=1)) < 1e-15
        # upper moon lies on the unit circle, lower on the circle around (1, 0.5)
        np.testing.assert_allclose(np.hypot(*upper.T), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.hypot(lower[:, 0] - 1, lower[:, 1] - 0.5), 1.0, atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 100, 2507])
    def test_balance(self, n):
        counts = np.bincount(two_moons(n, 0.1, seed=0).labels, minlength=2)
        assert abs(counts[0] - counts[1]) <= 1 and counts.sum() == n

    def test_deterministic(self):
        a, b = two_moons(50, 0.1, seed=9), two_moons(50, 0.1, seed=9)
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
        assert a.fingerprint() == b.fingerprint() != two_moons(50, 0.1, seed=10).fingerprint()

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            two_moons(1)


class TestClusters:
    def test_zero_sd_sits_on_centers(self):
        ds = gaussian_clusters([[0, 0], [5, 5]], 10, 0.0, [0, 1], seed=0)
        for c, center in enumerate([[0, 0], [5, 5]]):
            np.testing.assert_array_equal(ds.inputs[ds.labels == c], np.tile(center, (10, 1)))

    def test_four_clusters_two_classes(self):
        centers = [[0, 0], [4, 0], [0, 4], [4, 4]]
        ds = gaussian_clusters(centers, 50, 0.3, [0, 1, 1, 0], seed=1)
        assert ds.class_count == 2
        assert np.bincount(ds.labels).tolist() == [100, 100]

    def test_cluster_means_within_clt_bound(self):
        centers = np.array([[0.0, 0.0], [3.0, -1.0], [-2.0, 5.0]])
        sd, per = 0.5, 400
        rng_ds = gaussian_clusters(centers, per, sd, [0, 1, 2], seed=4)
        for c, center in enumerate(centers):
            mean = rng_ds.inputs[rng_ds.labels == c].mean(axis=0)
            assert np.all(np.abs(mean - center) <= 3 * sd / math.sqrt(per))

    def test_bad_mapping(self):
        with pytest.raises(ValueError):
            gaussian_clusters([[0, 0], [1, 1]], 5, 0.1, [0], seed=0)
        with pytest.raises(ValueError):
            gaussian_clusters([[0, 0], [1, 1]], 5, 0.1, [0, 2], seed=0)
        with pytest.raises(ValueError):
            gaussian_clusters([[0, 0]], 5, 0.1, [0], seed=0)


class TestSplit:
    def test_three_labels_per_class(self):
        parts = split(two_moons(2506, 0.1, seed=0), SplitSpec())
        assert len(parts.labeled) == 6
        assert np.bincount(parts.labeled.labels).tolist() == [3, 3]
        assert len(parts.unlabeled) == 1006 and parts.unlabeled.labels is None
        assert (len(parts.validation), len(parts.test)) == (500, 1000)

    def test_partition_without_overlap(self):
        ds = two_moons(300, 0.1, seed=1)
        spec = SplitSpec(5, 100, 50, 140, include_labeled_in_unlabeled=False, seed=2)
        idx = split(ds, spec).indices
        allrows = np.concatenate([idx[k] for k in ("labeled", "unlabeled", "validation", "test")])
        assert sorted(allrows.tolist()) == list(range(300))
        assert not set(idx["labeled"]) & set(idx["unlabeled"])

    def test_labeled_appended_to_pool(self):
        idx = split(two_moons(100, 0.1, seed=1), SplitSpec(2, 40, 10, 10, True, 0)).indices
        assert set(idx["labeled"]) <= set(idx["unlabeled"])

    def test_reproducible(self):
        ds = two_moons(200, 0.1, seed=1)
        a, b = split(ds, SplitSpec(3, 50, 20, 20, seed=7)), split(ds, SplitSpec(3, 50, 20, 20, seed=7))
        for k in a.indices:
            assert np.array_equal(a.indices[k], b.indices[k])

    def test_infeasible_lists_shortfall(self):
        ds = two_moons(20, 0.1, seed=0)
        with pytest.raises(ValueError, match="need 30 rows, only 14"):
            split(ds, SplitSpec(3, 20, 5, 5))
        with pytest.raises(ValueError, match="class 0: need 11"):
            split(ds, SplitSpec(11, 0, 0, 0))


class TestStandardize:
    def test_own_statistics(self, rng):
        ds = Dataset(rng.normal(3, 7, size=(500, 3)))
        out = standardize(ds, ds)
        np.testing.assert_allclose(out.inputs.mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(out.inputs.std(axis=0), 1, atol=1e-6)

    def test_constant_column(self):
        ds = Dataset(np.column_stack([np.full(10, 4.0), np.arange(10.0)]))
        out = standardize(ds, ds)
        assert np.all(np.isfinite(out.inputs)) and np.all(out.inputs[:, 0] == 0)

    def test_uses_source_statistics_only(self, rng):
        train = Dataset(rng.normal(0, 1, size=(200, 2)))
        test = Dataset(rng.normal(2, 3, size=(100, 2)))
        out = standardize(train, test)
        assert np.all(np.isfinite(out.inputs))
        assert np.abs(out.inputs.mean(axis=0)).min() > 0.5


class TestBatches:
    def test_single_batch(self):
        ds = Dataset(np.arange(10.0).reshape(5, 2))
        got = list(batches(ds, 8, seed=0, epoch=0))
        assert len(got) == 1 and sorted(got[0].tolist()) == list(range(5))

    def test_epoch_is_a_permutation(self):
        ds = Dataset(np.zeros((23, 2)))
        got = list(batches(ds, 5, seed=1, epoch=3))
        assert [len(b) for b in got] == [5, 5, 5, 5, 3]
        assert sorted(np.concatenate(got).tolist()) == list(range(23))

    def test_reshuffles_per_epoch(self):
        ds = Dataset(np.zeros((50, 2)))
        e0 = np.concatenate(list(batches(ds, 10, 1, 0)))
        e1 = np.concatenate(list(batches(ds, 10, 1, 1)))
        assert not np.array_equal(e0, e1)
        assert np.array_equal(e0, np.concatenate(list(batches(ds, 10, 1, 0))))

    def test_independent_streams_pair_differently(self):
        ds = Dataset(np.zeros((100, 2)))
        j = next(batches(ds, 10, 11, 0))
        k = next(batches(ds, 10, 12, 0))
        assert not np.array_equal(j, k)

    def test_cycle_never_stops(self):
        ds = Dataset(np.zeros((3, 2)))
        it = cycle_batches(ds, 2, seed=0)
        got = [next(it) for _ in range(6)]
        assert [len(b) for b in got] == [2, 1, 2, 1, 2, 1]


class TestCsv:
    def test_fixture(self):
        ds = ingest_csv(FIXTURES / "six_rows.csv", CsvSchema(class_count=3))
        assert ds.inputs.shape == (6, 3) and ds.class_count == 3
        assert ds.labels.tolist() == [0, 1, 2, 0, 1, 2]
        assert ds.inputs[2, 2] == 1e-3
        assert len(ds.provenance["file_fingerprint"]) == 16

    def test_round_trip(self, tmp_path, rng):
        ds = Dataset(rng.normal(size=(40, 3)) * 1e3, rng.integers(0, 3, 40), 3)
        export_csv(ds, tmp_path / "d.csv")
        back = ingest_csv(tmp_path / "d.csv", CsvSchema(class_count=3))
        np.testing.assert_allclose(back.inputs, ds.inputs, atol=1e-12, rtol=0)
        assert np.array_equal(back.labels, ds.labels)

    def test_missing_label_column(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,f1\n1,2\n")
        with pytest.raises(SchemaError, match="label"):
            ingest_csv(tmp_path / "d.csv")
        assert ingest_csv(tmp_path / "d.csv", CsvSchema(has_label=False)).labels is None

    def test_malformed_row_has_line_number(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,f1,label\n1,2,0\n1,x,1\n")
        with pytest.raises(SchemaError, match=":3:"):
            ingest_csv(tmp_path / "d.csv")

    def test_label_out_of_range(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,label\n1,0\n2,5\n")
        with pytest.raises(SchemaError, match=":3: label 5"):
            ingest_csv(tmp_path / "d.csv", CsvSchema(class_count=2))
