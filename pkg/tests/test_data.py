import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from easyllp.data import (
    CsvFormatError,
    Dataset,
    blobs_bayes_accuracy,
    gen_fig2,
    gen_gaussian_blobs,
    load_csv,
    partition_into_bags,
    train_test_split,
    write_csv,
)
from easyllp.models import evaluate
from easyllp.trainers import ErmConfig, train_event_level


def labels_only(y):
    y = np.asarray(y)
    return Dataset(np.arange(y.size, dtype=np.float64)[:, None], y)


class TestDataset:
    def test_infers_classes(self):
        assert Dataset(np.zeros((3, 2)), [0, 3, 1]).num_classes == 4
        assert Dataset(np.zeros((2, 1)), [0, 0]).num_classes == 2

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), [0, 1])
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 2)), [0, 2], num_classes=2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 2)), [0.5, 1.0])

    def test_examples(self):
        ds = Dataset([[1.0, 2.0], [3.0, 4.0]], [1, 0])
        ex = ds[0]
        assert ex.label == 1
        assert_array_equal(ex.features, [1.0, 2.0])
        assert len(ds.examples) == 2


class TestPartition:
    def test_k2(self):
        bags = partition_into_bags(labels_only([1, 0, 1, 1]), 2, shuffle=False)
        assert_array_equal(bags.positive_rates, [0.5, 1.0])

    def test_k4(self):
        bags = partition_into_bags(labels_only([1, 0, 1, 1]), 4, shuffle=False)
        assert bags.n == 1
        assert bags.positive_rates[0] == 0.75

    def test_drop_remainder(self):
        bags = partition_into_bags(labels_only(np.zeros(10, dtype=int)), 4, shuffle=False)
        assert bags.n == 2
        assert bags.dropped_count == 2
        assert_array_equal(bags.dropped_indices, [8, 9])

    def test_too_small(self):
        with pytest.raises(ValueError):
            partition_into_bags(labels_only([0, 1]), 3, shuffle=False)

    def test_shuffle_needs_rng(self):
        with pytest.raises(ValueError):
            partition_into_bags(labels_only([0, 1]), 1, shuffle=True)

    @settings(max_examples=60)
    @given(st.integers(1, 60), st.integers(1, 9), st.integers(0, 2**31), st.integers(2, 4))
    def test_multiset_and_exact_alpha(self, n, k, seed, C):
        rng = np.random.default_rng(seed)
        if n < k:
            n = k
        ds = Dataset(rng.normal(size=(n, 3)), rng.integers(0, C, size=n), C)
        bags = partition_into_bags(ds, k, shuffle=True, rng=rng)
        rows = np.vstack([bags.flat_features(), ds.X[bags.dropped_indices]])
        assert_array_equal(rows, ds.X[bags.order])
        assert sorted(map(tuple, rows)) == sorted(map(tuple, ds.X))
        hidden = bags.oracle_labels()
        for i in range(bags.n):
            counts = bags.alphas[i] * k
            assert_array_equal(counts, np.round(counts))
            assert_array_equal(np.round(counts), np.bincount(hidden[i], minlength=C))
            assert abs(bags.alphas[i].sum() - 1) <= 1e-12
        assert bags.features.shape == (n // k, k, 3)

    def test_immutable(self):
        bags = partition_into_bags(labels_only([0, 1, 1, 0]), 2, shuffle=False)
        with pytest.raises(ValueError):
            bags.features[0, 0, 0] = 9.0


class TestCsv:
    def test_basic(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x1,x2,y\n0.1,0.2,1\n0.3,0.4,0\n")
        ds = load_csv(path)
        assert (len(ds), ds.feature_dim, ds.num_classes) == (2, 2, 2)
        assert_array_equal(ds.y, [1, 0])
        assert_array_equal(ds.X, [[0.1, 0.2], [0.3, 0.4]])

    def test_empty(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("")
        with pytest.raises(CsvFormatError):
            load_csv(path)

    def test_label_three(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,3\n2,0\n")
        assert load_csv(path).num_classes == 4

    def test_label_by_name_and_no_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("lab,a\n1,5.5\n0,1e-3\n")
        ds = load_csv(path, label_column="lab")
        assert_array_equal(ds.y, [1, 0])
        assert_array_equal(ds.X[:, 0], [5.5, 1e-3])
        path.write_text("1,5.5\n0,2\n")
        assert_array_equal(load_csv(path, label_column=0, has_header=False).y, [1, 0])

    @pytest.mark.parametrize(
        "text, needle",
        [
            ("x,y\n1,0\nfoo,1\n", "row 3, column 1"),
            ("x,y\n1,0\n2\n", "row 3"),
            ("x,y\n1,0.5\n", "row 2, column 2"),
        ],
    )
    def test_errors_name_location(self, tmp_path, text, needle):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(CsvFormatError, match=needle):
            load_csv(path)

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n1,0\n")
        with pytest.raises(CsvFormatError, match="label"):
            load_csv(path, label_column="target")
        with pytest.raises(CsvFormatError, match="label"):
            load_csv(path, label_column=5)

    def test_round_trip(self, tmp_path):
        ds = gen_gaussian_blobs(50, 3, 2.0, 0.4, np.random.default_rng(0))
        path = tmp_path / "r.csv"
        write_csv(ds, path)
        back = load_csv(path)
        assert_array_equal(back.X, ds.X)
        assert_array_equal(back.y, ds.y)


class TestGenerators:
    def test_fig2_labels(self):
        ds = gen_fig2(1000, np.random.default_rng(0))
        assert_array_equal(ds.y, (ds.X[:, 0] <= 0.5).astype(int))
        assert ds.feature_dim == 1

    def test_fig2_rate(self):
        assert 0.49 <= gen_fig2(10**5, np.random.default_rng(1)).label_mean() <= 0.51

    def test_determinism(self):
        a = gen_fig2(100, np.random.default_rng(4))
        b = gen_fig2(100, np.random.default_rng(4))
        assert_array_equal(a.X, b.X)
        c = gen_gaussian_blobs(100, 3, 1.0, 0.5, np.random.default_rng(4))
        d = gen_gaussian_blobs(100, 3, 1.0, 0.5, np.random.default_rng(4))
        assert_array_equal(c.X, d.X)
        assert_array_equal(c.y, d.y)

    def test_blobs_rate(self):
        for rate in (0.2, 0.5, 0.8):
            ds = gen_gaussian_blobs(10**4, 4, 2.0, rate, np.random.default_rng(2))
            assert abs(ds.label_mean() - rate) <= 0.02

    def test_blobs_centres(self):
        ds = gen_gaussian_blobs(4 * 10**4, 4, 6.0, 0.5, np.random.default_rng(3))
        mu1 = ds.X[ds.y == 1].mean(axis=0)
        assert np.allclose(mu1, 3.0 / 2.0, atol=0.05)

    def test_bayes_accuracy(self):
        assert blobs_bayes_accuracy(0.0) == 0.5
        assert blobs_bayes_accuracy(6.0) == pytest.approx(0.99865, abs=1e-5)
        assert blobs_bayes_accuracy(3.29) == pytest.approx(0.95, abs=1e-3)

    @pytest.mark.parametrize("separation, lo, hi", [(6.0, 0.95, 1.0), (0.0, 0.45, 0.55)])
    def test_trained_accuracy(self, separation, lo, hi):
        rng = np.random.default_rng(10)
        train = gen_gaussian_blobs(10**4, 5, separation, 0.5, rng)
        test = gen_gaussian_blobs(10**4, 5, separation, 0.5, rng)
        report = train_event_level(train, ErmConfig(epochs=3, batch_bags=64))
        assert lo <= evaluate(report.final_model, test).accuracy <= hi

    def test_domain(self):
        with pytest.raises(ValueError):
            gen_gaussian_blobs(10, 2, 1.0, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            gen_fig2(0, np.random.default_rng(0))


def test_train_test_split():
    ds = gen_fig2(100, np.random.default_rng(0))
    train, test = train_test_split(ds, 0.25, np.random.default_rng(1))
    assert (len(train), len(test)) == (75, 25)
    assert sorted(np.concatenate([train.X[:, 0], test.X[:, 0]])) == sorted(ds.X[:, 0])
    with pytest.raises(ValueError):
        train_test_split(ds, 1.0, np.random.default_rng(1))
