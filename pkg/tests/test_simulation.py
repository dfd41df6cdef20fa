import numpy as np
import pytest

from eend.audio import Waveform, snr_db
from eend.exceptions import ConfigurationError, UndefinedMetricError
from eend.simulation import (
    CorpusPools,
    MixtureRecipe,
    SimulationConfig,
    build_corpus,
    overlap_ratio,
    render,
    sample_interval,
    simulate,
    timeline_to_labels,
)
from eend.synthetic import write_synthetic_corpus
from eend.timeline import Timeline, read_rttm


def _brute_overlap(timeline, step=0.001):
    # Oracle: rasterize on a 1 ms grid and count.
    end = timeline.end
    t = (np.arange(int(round(end / step))) + 0.5) * step
    counts = np.zeros_like(t)
    for intervals in timeline.values():
        for a, b in intervals:
            counts += (t >= a) & (t < b)
    return (counts >= 2).sum() / (counts >= 1).sum()


class TestOverlapRatio:
    def test_identical(self):
        assert overlap_ratio(Timeline({"A": [(0, 3)], "B": [(0, 3)]})) == 1.0

    def test_disjoint(self):
        assert overlap_ratio(Timeline({"A": [(0, 3)], "B": [(4, 5)]})) == 0.0

    def test_half(self):
        tl = Timeline({"A": [(0, 10)], "B": [(5, 10)]})
        assert overlap_ratio(tl) == 0.5
        assert _brute_overlap(tl) == pytest.approx(0.5)

    def test_random_against_grid(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            segs = {s: [tuple(sorted(rng.integers(0, 2000, 2) / 100)) for _ in range(4)]
                    for s in "ABC"}
            tl = Timeline(segs)
            if not len(tl):
                continue
            assert overlap_ratio(tl) == pytest.approx(_brute_overlap(tl, 0.005), abs=1e-9)

    def test_no_speech(self):
        with pytest.raises(UndefinedMetricError):
            overlap_ratio(Timeline())


class TestSampleInterval:
    def test_nonnegative_and_mean(self):
        d = sample_interval(2.0, np.random.default_rng(0), size=100_000)
        assert (d >= 0).all()
        assert abs(d.mean() - 2.0) / 2.0 < 0.02

    def test_reproducible(self):
        a = sample_interval(2.0, np.random.default_rng(9), size=10)
        b = sample_interval(2.0, np.random.default_rng(9), size=10)
        np.testing.assert_array_equal(a, b)


class TestTimelineToLabels:
    def test_empty(self):
        assert not timeline_to_labels(Timeline(), 0.1, 20, speakers=["A"]).any()

    def test_full(self):
        y = timeline_to_labels(Timeline({"A": [(0, 2.0)]}), 0.1, 20)
        assert y.shape == (20, 1) and y.all()

    def test_first_ten(self):
        y = timeline_to_labels(Timeline({"A": [(0, 1.0)]}), 0.1, 20)
        # Oracle: frame t centre is (t + 0.5) * 0.1.
        expected = [1 if (t + 0.5) * 0.1 < 1.0 else 0 for t in range(20)]
        assert y[:, 0].tolist() == expected
        assert y.sum() == 10

    def test_columns_sorted_by_name(self):
        tl = Timeline({"b": [(0, 0.5)], "a": [(1.0, 1.5)]})
        y = timeline_to_labels(tl, 0.1, 20)
        assert y[0].tolist() == [0, 1]
        assert y[12].tolist() == [1, 0]


def _toy_pools():
    rng = np.random.default_rng(0)
    speakers = {f"s{i}": [Waveform(rng.normal(size=int(rng.integers(800, 3000))) * 0.1)
                          for _ in range(6)] for i in range(4)}
    noises = [Waveform(rng.normal(size=5000) * 0.01)]
    rirs = [Waveform(np.r_[1.0, 0.3 * rng.normal(size=50)])]
    return CorpusPools.from_waveforms(speakers, noises, rirs)


@pytest.fixture(scope="module")
def pools():
    return _toy_pools()


@pytest.fixture
def config():
    return SimulationConfig(n_spk=2, n_umin=2, n_umax=4, beta=0.5, seed=3)


class TestSimulate:
    def test_degenerate_identity(self):
        utt = Waveform(np.random.default_rng(1).normal(size=1234) * 0.1)
        pools = CorpusPools.from_waveforms({"A": [utt]}, [], [Waveform(np.array([1.0]))])
        cfg = SimulationConfig(n_spk=1, n_umin=1, n_umax=1, beta=1e-12,
                               snr_choices=(float("inf"),))
        out, recipe = simulate(cfg, pools)
        np.testing.assert_allclose(out.audio.samples, utt.samples, atol=1e-15)
        assert out.timeline == Timeline({"A": [(0.0, 1234 / 8000)]})
        assert recipe.noise == ""

    def test_deterministic(self, config, pools):
        a, ra = simulate(config, pools, 7)
        b, rb = simulate(config, pools, 7)
        assert ra == rb
        assert a.audio.samples.tobytes() == b.audio.samples.tobytes()

    def test_index_changes_draws(self, config, pools):
        assert simulate(config, pools, 1)[1] != simulate(config, pools, 2)[1]

    def test_replay_from_stored_recipe(self, config, pools, tmp_path):
        out, recipe = simulate(config, pools, 4)
        recipe.save(tmp_path / "r.recipe")
        loaded = MixtureRecipe.load(tmp_path / "r.recipe")
        assert loaded == recipe
        assert render(loaded, pools).audio.samples.tobytes() == out.audio.samples.tobytes()

    def test_structure(self, config, pools):
        for i in range(20):
            out, recipe = simulate(config, pools, i)
            for utts in recipe.utterances:
                assert config.n_umin <= len(utts) <= config.n_umax
            # Length equals the longest speaker track.
            rir_len = pools.length(recipe.rirs[0])
            tracks = [sum(int(round(d * 8000)) + pools.length(u) + rir_len - 1
                          for u, d in zip(utts, ds))
                      for utts, ds in zip(recipe.utterances, recipe.intervals)]
            assert len(out.audio) == max(tracks)
            duration = out.audio.duration
            for intervals in out.timeline.values():
                assert all(0 <= a < b <= duration for a, b in intervals)
                assert all(b1 <= a2 for (_, b1), (a2, _) in zip(intervals, intervals[1:]))
            assert 0.0 <= out.stats["overlap_ratio"] <= 1.0

    def test_snr_is_exact(self, config, pools):
        recipe = simulate(config, pools, 0)[1]
        clean = render(MixtureRecipe(**{**recipe.__dict__, "snr": float("inf")}), pools).audio
        noisy = render(recipe, pools).audio
        assert abs(snr_db(clean.samples, noisy.samples - clean.samples) - recipe.snr) < 1e-6

    def test_empty_pools(self, config):
        with pytest.raises(ConfigurationError):
            simulate(config, CorpusPools({}, [], []))
        with pytest.raises(ConfigurationError):
            simulate(config, CorpusPools({"a": ["x"], "b": ["y"]}, ["n"], []))

    def test_unreadable_utterance_named(self, tmp_path):
        pools = CorpusPools({"a": [str(tmp_path / "missing.wav")]}, [], ["rir"],
                            lengths={"rir": 1}, audio={"rir": Waveform(np.ones(1))})
        cfg = SimulationConfig(n_spk=1, n_umin=1, n_umax=1, snr_choices=(float("inf"),))
        with pytest.raises(Exception, match="missing.wav"):
            simulate(cfg, pools)

    def test_overlap_decreases_with_beta(self, pools):
        means = []
        for beta in (0.5, 2.0):
            cfg = SimulationConfig(n_spk=2, n_umin=3, n_umax=5, beta=beta, seed=11)
            means.append(np.mean([simulate(cfg, pools, i)[0].stats["overlap_ratio"]
                                  for i in range(60)]))
        assert means[0] > means[1]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimulationConfig(n_umin=5, n_umax=3)
    with pytest.raises(ConfigurationError):
        SimulationConfig(beta=0)
    with pytest.raises(ConfigurationError):
        SimulationConfig(snr_choices=())


def test_build_corpus_from_manifests(tmp_path):
    manifests = write_synthetic_corpus(tmp_path / "pool", n_speakers=4, utterances_per_speaker=4,
                                       seed=2)
    pools = CorpusPools.from_manifests(manifests["speakers"], manifests["noises"],
                                       manifests["rirs"])
    cfg = SimulationConfig(n_spk=2, n_umin=2, n_umax=3, seed=5)
    manifest, stats = build_corpus(cfg, pools, 3, tmp_path / "mix")
    lines = manifest.read_text().splitlines()
    assert len(lines) == 3 and len(stats) == 3
    mid, wav, rttm = lines[0].split("\t")
    assert mid in read_rttm(tmp_path / "mix" / rttm)
    assert (tmp_path / "mix" / f"{mid}.recipe").exists()
    again, _ = build_corpus(cfg, pools, 3, tmp_path / "mix2")
    for a, b in zip(sorted((tmp_path / "mix").iterdir()), sorted((tmp_path / "mix2").iterdir())):
        assert a.read_bytes() == b.read_bytes()
