import numpy as np
import pytest

from cvxnn.datasets import (GENERATORS, DataError, ar3, circular_planted,
                            linear_cnn_signals, load_dataset, rank_deficient_gaussian,
                            read_csv, read_matrix, synthetic_series, toy1d)


class TestGenerators:
    def test_toy(self):
        X, y = toy1d()
        assert X.shape == (5, 1) and y.shape == (5,)
        D, L = load_dataset("toy1d")
        assert D.bias_augmented and D.shape == (5, 2)

    def test_rank_deficient_spectrum(self):
        X, y = rank_deficient_gaussian(10, 8, 4, seed=1)
        s = np.linalg.svd(X, compute_uv=False)
        np.testing.assert_allclose(s[4:], 1.0)
        assert s[3] > 1.0 and y.shape == (10,)

    def test_rank_deficient_rejects(self):
        with pytest.raises(ValueError):
            rank_deficient_gaussian(5, 8, 6)

    def test_ar3(self):
        s = np.arange(10.0)
        X, y = ar3(s)
        assert X.shape == (7, 3)
        np.testing.assert_array_equal(X[0], [0, 1, 2])
        assert y[0] == 3 and y[-1] == 9

    def test_ar3_too_short(self):
        with pytest.raises(ValueError):
            ar3(np.ones(3))

    def test_linear_cnn_signals(self):
        S, y = linear_cnn_signals(n=7, d=3, K=4)
        assert S.shape == (7, 12) and y.shape == (7,)

    def test_circular(self):
        X, y = circular_planted(n=10, d=8, freq=2)
        assert X.shape == (10, 8) and np.isrealobj(y)
        with pytest.raises(ValueError):
            circular_planted(d=8, freq=4)

    @pytest.mark.parametrize("name", sorted(GENERATORS))
    def test_seeded(self, name):
        a = load_dataset(name, seed=3)
        b = load_dataset(name, seed=3)
        np.testing.assert_array_equal(a[0].values, b[0].values)
        np.testing.assert_array_equal(a[1].values, b[1].values)

    def test_series_length(self):
        assert synthetic_series(50).shape == (50,)


class TestCSV:
    def test_named_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,a,b\n1,2,3\n4,5,6\n")
        X, Y, header = read_csv(p)
        np.testing.assert_array_equal(X, [[2, 3], [5, 6]])
        np.testing.assert_array_equal(Y[:, 0], [1, 4])

    def test_last_column_default(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,target\n1,2,3\n")
        X, Y, _ = read_csv(p)
        assert Y[0, 0] == 3

    def test_multi_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y1,y2\n1,2,3\n")
        assert read_csv(p)[1].shape == (1, 2)

    def test_bad_value_line_number(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\n1,2\n3,oops\n")
        with pytest.raises(DataError, match=":3:"):
            read_csv(p)

    def test_ragged_line_number(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\n1,2\n3\n")
        with pytest.raises(DataError, match=":3: expected 2 fields"):
            read_csv(p)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            read_csv(tmp_path / "none.csv")

    def test_empty(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,y\n")
        with pytest.raises(DataError):
            read_csv(p)

    def test_matrix(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("a,b\n1,2\n3,4\n")
        np.testing.assert_array_equal(read_matrix(p), [[1, 2], [3, 4]])
