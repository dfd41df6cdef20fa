import itertools
from fractions import Fraction

import numpy as np
import pytest

from eend.exceptions import ParseError, UndefinedMetricError
from eend.scoring import aggregate, optimal_assignment, score_corpus, score_der
from eend.timeline import Timeline, parse_rttm, timeline_from_rttm
from oracles import frame_oracle, random_grid_timeline


class TestScoreDer:
    def test_identity(self):
        ref = Timeline({"A": [(0, 4), (6, 9)], "B": [(3, 7)]})
        r = score_der(ref, ref)
        assert r.der == 0.0 and r.miss == r.false_alarm == r.confusion == 0.0

    def test_empty_hypothesis(self):
        r = score_der(Timeline({"A": [(0, 10)]}), Timeline(), collar=0.0)
        assert r.der == 1.0 and r.miss == 1.0

    def test_partial_miss(self):
        r = score_der(Timeline({"A": [(0, 10)]}), Timeline({"spk0": [(0, 8)]}), collar=0.0)
        assert r.miss == pytest.approx(0.2, abs=1e-15)
        assert r.false_alarm == 0.0 and r.confusion == 0.0
        assert frame_oracle(Timeline({"A": [(0, 10)]}), Timeline({"spk0": [(0, 8)]})) == (
            200, 0, 0, 1000)

    def test_swapped_labels(self):
        ref = Timeline({"A": [(0, 10)], "B": [(5, 10)]})
        hyp = Timeline({"B": [(0, 10)], "A": [(5, 10)]})
        r = score_der(ref, hyp, collar=0.0)
        assert r.confusion == 0.0 and r.der == 0.0
        assert r.assignment == {"A": "B", "B": "A"}

    def test_confusion(self):
        ref = Timeline({"A": [(0, 5)], "B": [(5, 10)]})
        hyp = Timeline({"x": [(0, 10)]})
        r = score_der(ref, hyp, collar=0.0)
        assert r.confusion == pytest.approx(0.5) and r.miss == 0.0

    def test_collar_excludes_boundaries(self):
        ref = Timeline({"A": [(1.0, 3.0)]})
        hyp = Timeline({"x": [(1.2, 2.8)]})
        assert score_der(ref, hyp, collar=0.25).der == 0.0
        r = score_der(ref, hyp, collar=0.0)
        assert r.miss == pytest.approx(0.2)

    def test_no_reference_speech(self):
        with pytest.raises(UndefinedMetricError):
            score_der(Timeline(), Timeline({"x": [(0, 1)]}))

    def test_components_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ref = random_grid_timeline(rng, "AB")
            hyp = random_grid_timeline(rng, "xyz")
            if ref.speech_duration() == 0:
                continue
            r = score_der(ref, hyp, collar=0.25)
            assert abs(r.der - (r.miss + r.false_alarm + r.confusion)) < 1e-12
            assert min(r.miss, r.false_alarm, r.confusion) >= 0

    @pytest.mark.parametrize("collar_frames", [0, 25])
    def test_frame_oracle(self, collar_frames):
        rng = np.random.default_rng(collar_frames)
        checked = 0
        for _ in range(200):
            ref = random_grid_timeline(rng, "ABC"[: int(rng.integers(1, 4))])
            hyp = random_grid_timeline(rng, "xyz"[: int(rng.integers(1, 4))])
            miss, fa, conf, scored = frame_oracle(ref, hyp, collar_frames)
            if scored == 0:
                continue
            r = score_der(ref, hyp, collar=collar_frames / 100)
            assert r.der == float(Fraction(miss + fa + conf, scored))
            assert r.miss == float(Fraction(miss, scored))
            assert r.false_alarm == float(Fraction(fa, scored))
            assert r.confusion == float(Fraction(conf, scored))
            checked += 1
        assert checked > 100

    def test_relabel_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            ref = random_grid_timeline(rng, "AB")
            hyp = random_grid_timeline(rng, "xy")
            if ref.speech_duration() == 0:
                continue
            a = score_der(ref, hyp, collar=0.0)
            b = score_der(ref, hyp.relabel({"x": "q", "y": "p"}), collar=0.0)
            assert (a.der, a.miss, a.false_alarm, a.confusion) == (
                b.der, b.miss, b.false_alarm, b.confusion)

    def test_spurious_segment_increases_fa(self):
        ref = Timeline({"A": [(0, 2)]})
        hyp = Timeline({"x": [(0, 2)]})
        base = score_der(ref, hyp)
        worse = score_der(ref, Timeline({"x": [(0, 2)], "y": [(4, 5)]}))
        assert worse.false_alarm > base.false_alarm
        assert worse.der >= base.der

    def test_aggregate_sums_seconds(self):
        a = score_der(Timeline({"A": [(0, 10)]}), Timeline(), collar=0)
        b = score_der(Timeline({"A": [(0, 30)]}), Timeline({"x": [(0, 30)]}), collar=0)
        assert aggregate([a, b]).der == 0.25

    def test_corpus_missing_hypothesis(self):
        refs = {"f1": Timeline({"A": [(0, 1)]}), "f2": Timeline({"A": [(0, 1)]})}
        per_file, total = score_corpus(refs, {"f1": Timeline({"x": [(0, 1)]})}, collar=0)
        assert per_file["f1"].der == 0.0 and per_file["f2"].der == 1.0
        assert total.der == 0.5


class TestAssignment:
    def test_diagonal(self):
        assert optimal_assignment([[5, 1], [0, 3]]) == {0: 0, 1: 1}

    def test_anti_diagonal(self):
        assert optimal_assignment([[0, 4], [3, 0]]) == {0: 1, 1: 0}

    def test_zero_overlap_unmapped(self):
        assert optimal_assignment([[2, 0], [0, 0]]) == {0: 0}

    def test_rectangular(self):
        assert optimal_assignment([[1, 5, 2]]) == {0: 1}
        assert optimal_assignment([[1], [5], [2]]) == {1: 0}

    def test_random_against_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            M = rng.uniform(0, 10, (3, 3))
            mapping = optimal_assignment(M)
            best = max(sum(M[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3)))
            assert sum(M[r, h] for r, h in mapping.items()) == pytest.approx(best, abs=1e-12)

    def test_large_uses_solver(self):
        rng = np.random.default_rng(1)
        M = rng.uniform(0, 1, (8, 8))
        mapping = optimal_assignment(M)
        assert len(mapping) == 8 and len(set(mapping.values())) == 8


class TestRttm:
    def test_empty(self):
        assert timeline_from_rttm([]) == Timeline()

    def test_adjacent_merge(self):
        lines = ["SPEAKER f 1 0.00 1.00 <NA> <NA> A <NA> <NA>",
                 "SPEAKER f 1 1.00 2.00 <NA> <NA> A <NA> <NA>"]
        assert timeline_from_rttm(lines) == Timeline({"A": [(0.0, 3.0)]})

    def test_order_independent(self):
        rng = np.random.default_rng(2)
        tl = random_grid_timeline(rng, "AB", max_segs=6)
        lines = tl.to_rttm("f")
        shuffled = [lines[i] for i in rng.permutation(len(lines))]
        assert timeline_from_rttm(shuffled) == timeline_from_rttm(lines)

    def test_malformed_line_number(self):
        lines = ["SPEAKER f 1 0.00 1.00 <NA> <NA> A <NA> <NA>", "SPEAKER f 1 abc"]
        with pytest.raises(ParseError, match="line 2"):
            parse_rttm(lines)
        with pytest.raises(ParseError, match="line 1"):
            parse_rttm(["SPEAKER f 1 x 1.0 <NA> <NA> A <NA> <NA>"])

    def test_format(self):
        lines = Timeline({"spk0": [(0.2, 0.5)]}).to_rttm("mix")
        assert lines == ["SPEAKER mix 1 0.20 0.30 <NA> <NA> spk0 <NA> <NA>"]

    def test_files_separated(self):
        lines = ["SPEAKER a 1 0.00 1.00 <NA> <NA> A <NA> <NA>",
                 "SPEAKER b 1 0.00 2.00 <NA> <NA> A <NA> <NA>"]
        parsed = parse_rttm(lines)
        assert set(parsed) == {"a", "b"}
        assert parsed["b"]["A"] == [(0.0, 2.0)]
