import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eend.audio import Waveform, write_wav
from eend.exceptions import ConfigurationError
from eend.inference import (
    Segment,
    decisions_to_segments,
    infer_file,
    median_filter,
    segments_to_rttm,
    segments_to_timeline,
)
from eend.model import DiarizationModel, ModelConfig
from eend.timeline import timeline_from_rttm


def naive_median(x, w):
    # Oracle: explicit edge padding and sorting.
    h = w // 2
    padded = np.concatenate([np.repeat(x[:1], h, 0), x, np.repeat(x[-1:], h, 0)])
    return np.array([[sorted(padded[t:t + w, c])[h] for c in range(x.shape[1])]
                     for t in range(len(x))])


class TestMedianFilter:
    def test_identity_width_one(self):
        x = np.random.default_rng(0).integers(0, 2, (20, 2))
        np.testing.assert_array_equal(median_filter(x, 1), x)

    def test_removes_short_blip(self):
        x = np.zeros((30, 1), dtype=np.uint8)
        x[10:13] = 1
        assert not median_filter(x, 11).any()

    def test_keeps_long_run(self):
        x = np.zeros((40, 1), dtype=np.uint8)
        x[10:30] = 1
        np.testing.assert_array_equal(median_filter(x, 11), x)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31), st.sampled_from([3, 5, 11]))
    def test_against_oracle(self, seed, w):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 2, (int(rng.integers(1, 40)), 2))
        np.testing.assert_array_equal(median_filter(x, w), naive_median(x, w))

    def test_unanimous_windows_unchanged(self):
        rng = np.random.default_rng(3)
        x = np.repeat(rng.integers(0, 2, (8, 2)), 12, axis=0)
        y = median_filter(x, 11)
        h = 5
        for t in range(len(x)):
            win = x[max(0, t - h):t + h + 1]
            for c in range(2):
                if (win[:, c] == win[0, c]).all():
                    assert y[t, c] == x[t, c]

    def test_even_width(self):
        with pytest.raises(ConfigurationError):
            median_filter(np.zeros((5, 1)), 4)


class TestSegments:
    def test_single_run(self):
        segs = decisions_to_segments(np.array([[0], [0], [1], [1], [1], [0], [0]]))
        assert len(segs) == 1
        assert segs[0].speaker == "spk0"
        assert segs[0].onset == pytest.approx(0.2) and segs[0].duration == pytest.approx(0.3)

    def test_empty_and_full(self):
        assert decisions_to_segments(np.zeros((5, 2))) == []
        segs = decisions_to_segments(np.ones((5, 2)))
        assert [(s.speaker, s.onset) for s in segs] == [("spk0", 0.0), ("spk1", 0.0)]

    def test_rttm_round_trip(self):
        rng = np.random.default_rng(5)
        d = rng.integers(0, 2, (60, 2))
        segs = decisions_to_segments(d)
        parsed = timeline_from_rttm(segments_to_rttm(segs, "f"))
        direct = segments_to_timeline(segs)
        assert parsed.speakers == direct.speakers
        for s in direct.speakers:
            np.testing.assert_allclose(parsed[s], direct[s], atol=1e-9)

    def test_rttm_line(self):
        assert segments_to_rttm([Segment("spk1", 0.2, 0.3)], "m") == [
            "SPEAKER m 1 0.20 0.30 <NA> <NA> spk1 <NA> <NA>"]

    def test_runs_reconstruct_decisions(self):
        d = np.random.default_rng(6).integers(0, 2, (50, 3))
        back = np.zeros_like(d)
        for s in decisions_to_segments(d, 1.0):
            c = int(s.speaker[3:])
            back[int(s.onset):int(s.onset + s.duration), c] = 1
        np.testing.assert_array_equal(back, d)


def test_infer_file(tmp_path):
    cfg = ModelConfig(num_layers=1, hidden_size=3, embed_dim=2, embed_layer=1)
    model = DiarizationModel(cfg, seed=0)
    model.params["output.W"][:] = 0.0
    model.params["output.b"][:] = [5.0, -5.0]
    model.save(tmp_path / "m.ckpt")
    write_wav(tmp_path / "x.wav", Waveform(np.random.default_rng(0).normal(size=16000) * 0.1))
    lines = infer_file(tmp_path / "m.ckpt", tmp_path / "x.wav")
    assert len(lines) == 1
    assert lines[0].split()[1] == "x" and lines[0].split()[7] == "spk0"
    assert float(lines[0].split()[3]) == 0.0


def test_infer_missing_wav(tmp_path):
    model = DiarizationModel(ModelConfig(num_layers=1, hidden_size=2, embed_dim=2,
                                         embed_layer=1))
    with pytest.raises(OSError, match="nope.wav"):
        infer_file(model, tmp_path / "nope.wav")


def test_infer_threshold_near_one_and_repeatable(tmp_path):
    model = DiarizationModel(ModelConfig(num_layers=1, hidden_size=3, embed_dim=2, embed_layer=1),
                             seed=1)
    wav = tmp_path / "y.wav"
    write_wav(wav, Waveform(np.random.default_rng(1).normal(size=12000) * 0.1))
    assert infer_file(model, wav, threshold=1 - 1e-12) == []
    assert infer_file(model, wav, threshold=0.0, median_width=1) == infer_file(
        model, wav, threshold=0.0, median_width=1)
    assert len(infer_file(model, wav, threshold=0.0)) == 2
