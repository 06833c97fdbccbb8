import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrbm.errors import CorruptError, DimError, FormatError, VersionError
from nrbm.knn import knn_error, knn_predict
from nrbm.persistence import (
    ModelFile,
    _canonical,
    export_filters,
    filter_tiles,
    load_model,
    model_to_document,
    read_pgm,
    save_model,
)
from nrbm.rbm import RbmParams
from nrbm.stability import LassoModel


def random_model(seed, kind="nrbm"):
    rng = np.random.default_rng(seed)
    N, K = rng.integers(1, 12, size=2)
    rbm = RbmParams(rng.normal(size=N), rng.normal(size=K), rng.normal(size=(N, K)) * 10.0 ** rng.integers(-300, 300))
    lasso = LassoModel(rng.normal(size=K), float(rng.normal()), 0.001) if kind == "pipeline" else None
    return ModelFile(kind, rbm, lasso, {"eta": 0.1, "alpha": 0.1}, int(seed))


class TestModelFiles:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["rbm", "nrbm", "pipeline"]))
    def test_round_trip_bit_exact(self, tmp_path_factory, seed, kind):
        path = tmp_path_factory.mktemp("m") / "model.json"
        m = random_model(seed, kind)
        save_model(m, path)
        back = load_model(path)
        assert back.model_kind == kind and back.master_seed == seed
        for name in ("a", "b", "W"):
            assert getattr(back.rbm, name).tobytes() == getattr(m.rbm, name).tobytes()
        if kind == "pipeline":
            assert back.lasso.weights.tobytes() == m.lasso.weights.tobytes()
            assert back.lasso.bias == m.lasso.bias

    def test_lasso_only(self, tmp_path):
        m = ModelFile("lasso", lasso=LassoModel(np.array([0.5, -1.0]), 0.25, 0.001))
        save_model(m, tmp_path / "l.json")
        assert load_model(tmp_path / "l.json").dims == (2, 0)

    def test_flipped_byte(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(random_model(1), path)
        raw = bytearray(path.read_bytes())
        i = raw.index(b'"data"') + 12
        raw[i] = ord("A") if raw[i] != ord("A") else ord("B")
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptError):
            load_model(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(random_model(2), path)
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(CorruptError):
            load_model(path)

    def test_version_mismatch(self, tmp_path):
        doc = model_to_document(random_model(3))
        doc.pop("sha256")
        doc["header"]["format_version"] = 99
        doc["sha256"] = hashlib.sha256(_canonical(doc)).hexdigest()
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            load_model(tmp_path / "m.json")

    def test_unknown_kind(self):
        with pytest.raises(FormatError):
            ModelFile("svm", rbm=RbmParams.zeros(2, 1))

    def test_pipeline_width(self):
        with pytest.raises(DimError):
            ModelFile("pipeline", RbmParams.zeros(2, 3), LassoModel(np.zeros(2), 0, 0))


class TestFilters:
    def test_darker_means_larger(self):
        W = np.array([[0.0], [1.0], [0.5], [0.25]])
        tiles = filter_tiles(W, 2, 2)
        np.testing.assert_array_equal(tiles[0].ravel(), [255, 0, 128, 191])

    def test_constant_tile_mid_gray(self):
        assert np.all(filter_tiles(np.full((4, 1), 0.3), 2, 2) == 128)

    def test_export_grid(self, tmp_path):
        rng = np.random.default_rng(0)
        p = RbmParams(np.zeros(6), np.zeros(5), rng.normal(size=(6, 5)))
        img = export_filters(p, 3, 2, 2, tmp_path / "f.pgm")
        back = read_pgm(tmp_path / "f.pgm")
        np.testing.assert_array_equal(img, back)
        # 3 rows of tiles (2 high), 2 columns (3 wide), 1-pixel padding
        assert back.shape == (3 * 3 + 1, 2 * 4 + 1)

    def test_hundred_tiles_ten_columns(self, tmp_path):
        p = RbmParams(np.zeros(4), np.zeros(100), np.random.default_rng(1).normal(size=(4, 100)))
        img = export_filters(p, 2, 2, 10, tmp_path / "f.pgm")
        assert img.shape == (10 * 3 + 1, 10 * 3 + 1)

    def test_bad_shape(self, tmp_path):
        with pytest.raises(DimError):
            export_filters(RbmParams.zeros(6, 2), 4, 2, 1, tmp_path / "f.pgm")


class TestKnn:
    def test_hand_example(self):
        train = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
        labels = np.array([0, 0, 1, 1])
        pred = knn_predict(train, labels, np.array([[1.0, 0.05], [0.05, 1.0]]), k=3)
        np.testing.assert_array_equal(pred, [0, 1])

    def test_tie_goes_to_nearest(self):
        train = np.array([[1.0, 0.0], [0.0, 1.0]])
        pred = knn_predict(train, np.array([4, 7]), np.array([[0.2, 1.0]]), k=2)
        assert pred[0] == 7

    def test_error_rate(self):
        train = np.eye(3)
        assert knn_error(train, [0, 1, 2], np.eye(3), [0, 1, 0], k=1) == pytest.approx(1 / 3)

    def test_euclidean(self):
        pred = knn_predict(np.array([[0.0], [10.0]]), np.array([0, 1]), np.array([[9.0]]), k=1, metric="euclidean")
        assert pred[0] == 1

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            knn_predict(np.eye(2), [0, 1], np.eye(2), k=3)
