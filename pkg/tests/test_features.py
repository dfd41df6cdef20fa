import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eend.audio import Waveform
from eend.exceptions import FormatError
from eend.features import (
    LogMelFeaturizer,
    align_labels,
    load_dataset,
    num_output_frames,
    read_matrix,
    splice,
    subsample,
    write_matrix,
)
from eend.timeline import Timeline


class TestSplice:
    def test_single_row(self):
        x = np.arange(23.0)[None, :]
        out = splice(x)
        assert out.shape == (1, 345)
        np.testing.assert_array_equal(out[0], np.tile(x[0], 15))

    def test_index_oracle(self):
        x = np.random.default_rng(0).normal(size=(20, 23))
        out = splice(x)
        assert out.shape == (20, 345)
        np.testing.assert_array_equal(out[10], np.concatenate([x[i] for i in range(3, 18)]))

    def test_edges_replicate(self):
        x = np.random.default_rng(1).normal(size=(5, 23))
        out = splice(x)
        rows = [x[min(max(i, 0), 4)] for i in range(-7, 8)]
        np.testing.assert_array_equal(out[0], np.concatenate(rows))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=60))
    def test_centre_block_preserved(self, T):
        x = np.random.default_rng(T).normal(size=(T, 23))
        np.testing.assert_array_equal(splice(x)[:, 7 * 23:8 * 23], x)


class TestSubsample:
    def test_counts(self):
        assert subsample(np.zeros((100, 3))).shape[0] == 10
        x = np.arange(25)[:, None]
        assert subsample(x).ravel().tolist() == [0, 10, 20]

    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(7, 2))
        np.testing.assert_array_equal(subsample(x, 1), x)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            subsample(np.zeros((3, 3)), 0)


class TestAlignLabels:
    def test_all_zero(self):
        assert not align_labels(Timeline(), 30, speakers=["a", "b"]).any()

    def test_all_one(self):
        assert align_labels(Timeline({"a": [(0, 5.0)]}), 30).all()

    def test_half(self):
        y = align_labels(Timeline({"a": [(0, 1.5)]}), 30)
        # Kept frame j starts at 0.1 j s and is centred 12.5 ms later.
        expected = [1 if 0.1 * j + 0.0125 < 1.5 else 0 for j in range(30)]
        assert y[:, 0].tolist() == expected


class TestFeaturizer:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=200, max_value=20000))
    def test_shape_law(self, L):
        feat = LogMelFeaturizer()
        X = feat.transform([Waveform(np.random.default_rng(L).normal(size=L))])[0]
        expected = math.ceil((1 + (L - 200) // 80) / 10)
        assert X.shape == (expected, 345)
        assert num_output_frames(L) == expected
        assert feat.labels_for(Timeline({"a": [(0, 1)]}), len(X)).shape[0] == expected
        assert np.isfinite(X).all()

    def test_sklearn_params(self):
        feat = LogMelFeaturizer(context_left=2, context_right=2, subsampling=1)
        assert feat.get_params()["context_left"] == 2
        X = feat.fit_transform([np.zeros(1000)])[0]
        assert X.shape == (1 + 800 // 80, 23 * 5)
        assert feat.n_features_out_ == 115


class TestMatrixArchive:
    @pytest.mark.parametrize("dtype", [np.float64, np.float32, np.uint8])
    def test_round_trip(self, tmp_path, dtype):
        x = (np.random.default_rng(0).normal(size=(7, 5)) * 10).astype(dtype)
        write_matrix(tmp_path / "m.bin", x)
        y = read_matrix(tmp_path / "m.bin")
        assert y.dtype == x.dtype
        np.testing.assert_array_equal(x, y)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "m.bin").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(FormatError):
            read_matrix(tmp_path / "m.bin")

    def test_truncated(self, tmp_path):
        write_matrix(tmp_path / "m.bin", np.ones((3, 3)))
        data = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(data[:-8])
        with pytest.raises(FormatError):
            read_matrix(tmp_path / "m.bin")

    def test_dataset_manifest(self, tmp_path):
        write_matrix(tmp_path / "a.feat", np.ones((4, 3)))
        write_matrix(tmp_path / "a.lab", np.zeros((4, 2), dtype=np.uint8))
        (tmp_path / "train.list").write_text("a.feat\ta.lab\n")
        [(X, Y)] = load_dataset(tmp_path / "train.list")
        assert X.shape == (4, 3) and Y.shape == (4, 2)
