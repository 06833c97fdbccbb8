import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrbm.data import (
    DataMatrix,
    bootstrap,
    load_dense_csv,
    load_idx,
    load_idx_labels,
    load_sparse_bow,
    make_batches,
    rng_stream,
    write_dense_csv,
    write_idx,
)
from nrbm.errors import DimError, FormatError, RangeError


def _idx_bytes(magic, dims, payload):
    return struct.pack(f">I{len(dims)}I", magic, *dims) + bytes(payload)


class TestIdx:
    def test_all_max_bytes_map_to_one(self, tmp_path):
        f = tmp_path / "img.idx"
        f.write_bytes(_idx_bytes(0x803, (4, 2, 2), [255] * 16))
        d = load_idx(f)
        assert (d.rows, d.cols) == (4, 4)
        assert np.all(d.values == 1.0)

    def test_byte_51_is_point_two(self, tmp_path):
        f = tmp_path / "img.idx"
        f.write_bytes(_idx_bytes(0x803, (1, 1, 2), [51, 0]))
        assert load_idx(f).values[0, 0] == pytest.approx(0.2, abs=1e-15)

    def test_row_major_flattening(self, tmp_path):
        f = tmp_path / "img.idx"
        write_idx(f, np.arange(12, dtype=np.uint8).reshape(2, 2, 3))
        d = load_idx(f)
        np.testing.assert_array_equal(d.values[1] * 255, np.arange(6, 12))

    def test_unsupported_magic(self, tmp_path):
        f = tmp_path / "bad.idx"
        f.write_bytes(_idx_bytes(0x802, (1, 1, 1), [0, 0]))
        with pytest.raises(FormatError):
            load_idx(f)

    def test_truncated_payload(self, tmp_path):
        f = tmp_path / "short.idx"
        f.write_bytes(_idx_bytes(0x803, (2, 2, 2), [1] * 7))
        with pytest.raises(FormatError):
            load_idx(f)

    def test_truncated_header(self, tmp_path):
        f = tmp_path / "hdr.idx"
        f.write_bytes(struct.pack(">I", 0x803) + b"\x00\x00")
        with pytest.raises(FormatError):
            load_idx(f)

    def test_dims_overflow(self, tmp_path):
        f = tmp_path / "huge.idx"
        f.write_bytes(_idx_bytes(0x803, (2**31, 2**16, 2**16), []))
        with pytest.raises(FormatError):
            load_idx(f)

    def test_labels_attach(self, tmp_path):
        img, lab = tmp_path / "i", tmp_path / "l"
        write_idx(img, np.zeros((3, 2, 2), dtype=np.uint8))
        lab.write_bytes(_idx_bytes(0x801, (3,), [7, 0, 1]))
        d = load_idx(img, lab)
        np.testing.assert_array_equal(d.labels, [7, 0, 1])
        np.testing.assert_array_equal(load_idx_labels(lab), [7, 0, 1])

    def test_label_count_mismatch(self, tmp_path):
        img, lab = tmp_path / "i", tmp_path / "l"
        write_idx(img, np.zeros((3, 2, 2), dtype=np.uint8))
        lab.write_bytes(_idx_bytes(0x801, (2,), [0, 1]))
        with pytest.raises(DimError):
            load_idx(img, lab)


class TestDenseCsv:
    def test_parse_with_labels(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("0.5,1.0,0\n0.0,0.2,1\n")
        d = load_dense_csv(f, has_label_col=True)
        np.testing.assert_array_equal(d.values, [[0.5, 1.0], [0.0, 0.2]])
        np.testing.assert_array_equal(d.labels, [0, 1])

    def test_minmax_midpoint(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("2\n3\n4\n")
        d = load_dense_csv(f, normalize=True)
        assert d.values[1, 0] == 0.5

    def test_constant_column_maps_to_zero(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("7,1\n7,2\n7,3\n")
        d = load_dense_csv(f, normalize=True)
        np.testing.assert_array_equal(d.values[:, 0], 0.0)

    def test_ragged(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("0.1,0.2\n0.3\n")
        with pytest.raises(FormatError):
            load_dense_csv(f)

    def test_non_numeric(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("0.1,abc\n")
        with pytest.raises(FormatError):
            load_dense_csv(f)

    def test_out_of_range_without_normalize(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("0.1,1.5\n")
        with pytest.raises(RangeError):
            load_dense_csv(f)

    def test_header(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("a,b\n0.1,0.2\n")
        d = load_dense_csv(f, header=True)
        assert d.feature_names == ("a", "b")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=1, max_size=8))
    def test_round_trip(self, tmp_path_factory, rows):
        f = tmp_path_factory.mktemp("rt") / "d.csv"
        x = np.array(rows)
        write_dense_csv(f, x)
        back = load_dense_csv(f).values
        np.testing.assert_allclose(back, x, rtol=1e-12, atol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2), min_size=1, max_size=8))
    def test_normalized_data_satisfies_invariants(self, tmp_path_factory, rows):
        f = tmp_path_factory.mktemp("fz") / "d.csv"
        write_dense_csv(f, np.array(rows))
        d = load_dense_csv(f, normalize=True)
        assert d.values.min() >= 0.0 and d.values.max() <= 1.0
        assert d.rows == len(rows)


class TestSparseBow:
    def test_presence(self, tmp_path):
        f = tmp_path / "d.svm"
        f.write_text("1 3:5 7:1\n")
        d = load_sparse_bow(f, n_features=8)
        expected = np.zeros(8)
        expected[[2, 6]] = 1.0
        np.testing.assert_array_equal(d.values[0], expected)
        assert d.labels[0] == 1

    def test_zero_count_is_absence(self, tmp_path):
        f = tmp_path / "d.svm"
        f.write_text("0 1:0\n")
        d = load_sparse_bow(f)
        assert d.values.sum() == 0 and d.labels[0] == 0

    def test_blank_lines_skipped(self, tmp_path, caplog):
        f = tmp_path / "d.svm"
        f.write_text("1 1:1\n\n0 2:3\n")
        with caplog.at_level(logging.WARNING):
            d = load_sparse_bow(f)
        assert d.rows == 2
        assert "skipped 1 blank" in caplog.text

    def test_header_vocabulary(self, tmp_path):
        f = tmp_path / "d.svm"
        f.write_text("# features=10\n1 2:1\n")
        assert load_sparse_bow(f).cols == 10

    def test_duplicate_index(self, tmp_path):
        f = tmp_path / "d.svm"
        f.write_text("1 2:1 2:3\n")
        with pytest.raises(FormatError):
            load_sparse_bow(f)

    def test_index_below_one(self, tmp_path):
        f = tmp_path / "d.svm"
        f.write_text("1 0:1\n")
        with pytest.raises(FormatError):
            load_sparse_bow(f)


class TestDataMatrix:
    def test_rejects_out_of_range(self):
        with pytest.raises(RangeError):
            DataMatrix(np.array([[1.2]]))

    def test_label_length(self):
        with pytest.raises(DimError):
            DataMatrix(np.zeros((2, 2)), labels=[0])

    def test_empty(self):
        with pytest.raises(DimError):
            DataMatrix(np.zeros((0, 3)))

    def test_immutable(self):
        d = DataMatrix(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            d.values[0, 0] = 1.0


class TestBatches:
    def test_remainder_batch(self):
        assert make_batches(5, 2, 0, 1).sizes() == [2, 2, 1]

    def test_deterministic(self):
        a, b = make_batches(50, 7, 3, 2), make_batches(50, 7, 3, 2)
        np.testing.assert_array_equal(a.order, b.order)

    def test_epochs_differ(self):
        assert not np.array_equal(make_batches(50, 7, 3, 1).order, make_batches(50, 7, 3, 2).order)

    def test_single_batch_when_b_exceeds_m(self):
        assert make_batches(4, 10, 0, 1).sizes() == [4]

    @given(st.integers(1, 200), st.integers(1, 50), st.integers(0, 2**32), st.integers(0, 100))
    def test_partition(self, M, B, seed, epoch):
        plan = make_batches(M, B, seed, epoch)
        joined = np.concatenate(list(plan))
        np.testing.assert_array_equal(np.sort(joined), np.arange(M))


class TestBootstrap:
    def test_single_row(self):
        np.testing.assert_array_equal(bootstrap(1, 1, 0).row_indices, [0])

    def test_deterministic(self):
        np.testing.assert_array_equal(bootstrap(30, 4, 9).row_indices, bootstrap(30, 4, 9).row_indices)

    def test_distinct_fraction(self):
        # Monte-Carlo: expected fraction of distinct rows tends to 1 - 1/e
        M = 2000
        frac = np.mean([np.unique(bootstrap(M, r, 11).row_indices).size / M for r in range(1000)])
        assert abs(frac - (1 - np.exp(-1))) < 0.02


def test_streams_are_independent():
    a = rng_stream(5, 1).random(4)
    b = rng_stream(5, 2).random(4)
    c = rng_stream(5, 1).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)
