"""Overlap-aware diarization error rate.

Scoring follows NIST md-eval conventions: within scored time, an instant
with ``n_ref`` reference and ``n_hyp`` hypothesis speakers contributes
``max(0, n_ref - n_hyp)`` missed speaker time, ``max(0, n_hyp - n_ref)``
false alarm, and ``min(n_ref, n_hyp) - n_correct`` confusion, where
``n_correct`` counts active (ref, hyp) pairs linked by the optimal one-to-one
speaker mapping. A no-score collar surrounds every reference boundary.

Times are converted to exact rationals via their shortest decimal
representation, so results carry no grid or accumulation error.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ParseError, UndefinedMetricError
from .timeline import Timeline

EXHAUSTIVE_LIMIT = 6


def _exact(t) -> Fraction:
    return t if isinstance(t, Fraction) else Fraction(repr(float(t)))


def optimal_assignment(overlap) -> dict[int, int]:
    """One-to-one partial mapping ``ref_index -> hyp_index`` maximizing mapped overlap.

    Pairs with zero overlap are left unmapped. Exhaustive search up to
    ``EXHAUSTIVE_LIMIT`` speakers per side, Hungarian algorithm beyond.
    """
    overlap = [list(row) for row in overlap]
    n_ref = len(overlap)
    n_hyp = len(overlap[0]) if n_ref else 0
    if n_ref == 0 or n_hyp == 0:
        return {}
    if max(n_ref, n_hyp) <= EXHAUSTIVE_LIMIT:
        k = max(n_ref, n_hyp)
        square = [[overlap[r][h] if r < n_ref and h < n_hyp else 0 for h in range(k)]
                  for r in range(k)]
        best, best_perm = None, None
        for perm in itertools.permutations(range(k)):
            total = sum(square[r][perm[r]] for r in range(k))
            if best is None or total > best:
                best, best_perm = total, perm
        pairs = [(r, best_perm[r]) for r in range(n_ref)]
    else:
        rows, cols = linear_sum_assignment(np.array(overlap, dtype=float), maximize=True)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    return {r: h for r, h in pairs if h < n_hyp and overlap[r][h] > 0}


@dataclass
class DerReport:
    der: float
    miss: float
    false_alarm: float
    confusion: float
    scored_speech: float
    miss_time: float = 0.0
    false_alarm_time: float = 0.0
    confusion_time: float = 0.0
    assignment: dict[str, str] = field(default_factory=dict)
    exact_times: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def from_times(cls, miss, fa, conf, scored, assignment=None) -> "DerReport":
        miss, fa, conf, scored = (_exact(x) for x in (miss, fa, conf, scored))
        if scored <= 0:
            raise UndefinedMetricError("no scored reference speech; DER is undefined")
        return cls(
            der=float((miss + fa + conf) / scored),
            miss=float(miss / scored),
            false_alarm=float(fa / scored),
            confusion=float(conf / scored),
            scored_speech=float(scored),
            miss_time=float(miss),
            false_alarm_time=float(fa),
            confusion_time=float(conf),
            assignment=dict(assignment or {}),
            exact_times=(miss, fa, conf, scored),
        )


def _collar_zones(reference: Timeline, collar: Fraction) -> list[tuple[Fraction, Fraction]]:
    if collar <= 0:
        return []
    zones = []
    for intervals in reference.values():
        for a, b in intervals:
            for t in (_exact(a), _exact(b)):
                zones.append((max(Fraction(0), t - collar), t + collar))
    zones.sort()
    merged = []
    for a, b in zones:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def _elementary_segments(reference: Timeline, hypothesis: Timeline, collar: Fraction):
    """Accumulate scored duration per (active ref set, active hyp set)."""
    events = []  # (time, order, kind, key); ends sort before starts at the same time
    for kind, tl in (("ref", reference), ("hyp", hypothesis)):
        for spk, intervals in tl.items():
            for a, b in intervals:
                events.append((_exact(a), 1, kind, spk))
                events.append((_exact(b), 0, kind, spk))
    for a, b in _collar_zones(reference, collar):
        events.append((a, 1, "collar", None))
        events.append((b, 0, "collar", None))
    events.sort(key=lambda e: (e[0], e[1]))
    active = {"ref": set(), "hyp": set()}
    in_collar = 0
    durations: dict[tuple[frozenset, frozenset], Fraction] = defaultdict(Fraction)
    prev = None
    for t, start, kind, spk in events:
        if prev is not None and t > prev and in_collar == 0 and (active["ref"] or active["hyp"]):
            durations[(frozenset(active["ref"]), frozenset(active["hyp"]))] += t - prev
        if kind == "collar":
            in_collar += 1 if start else -1
        elif start:
            active[kind].add(spk)
        else:
            active[kind].discard(spk)
        prev = t
    return durations


def score_der(reference: Timeline, hypothesis: Timeline, collar: float = 0.25) -> DerReport:
    """DER of `hypothesis` against `reference` with a ``±collar`` second no-score zone."""
    collar = _exact(collar)
    durations = _elementary_segments(reference, hypothesis, collar)
    refs = reference.speakers
    hyps = hypothesis.speakers
    overlap = [[Fraction(0)] * len(hyps) for _ in refs]
    r_index = {s: i for i, s in enumerate(refs)}
    h_index = {s: i for i, s in enumerate(hyps)}
    for (R, H), dt in durations.items():
        for r in R:
            for h in H:
                overlap[r_index[r]][h_index[h]] += dt
    mapping = optimal_assignment(overlap)
    pairs = {(refs[r], hyps[h]) for r, h in mapping.items()}

    miss = fa = conf = scored = Fraction(0)
    for (R, H), dt in durations.items():
        n_ref, n_hyp = len(R), len(H)
        correct = sum(1 for r, h in pairs if r in R and h in H)
        scored += n_ref * dt
        miss += max(0, n_ref - n_hyp) * dt
        fa += max(0, n_hyp - n_ref) * dt
        conf += (min(n_ref, n_hyp) - correct) * dt
    return DerReport.from_times(miss, fa, conf, scored, {r: h for r, h in sorted(pairs)})


def aggregate(reports: list[DerReport]) -> DerReport:
    """Corpus-level DER: sum error seconds across files before dividing."""
    keys = ("miss_time", "false_alarm_time", "confusion_time", "scored_speech")
    totals = [Fraction(0)] * 4
    for r in reports:
        parts = r.exact_times or tuple(_exact(getattr(r, k)) for k in keys)
        totals = [a + b for a, b in zip(totals, parts)]
    return DerReport.from_times(*totals)


REPORT_HEADER = "file\tDER\tMI\tFA\tCF\tscored_seconds\tMI_seconds\tFA_seconds\tCF_seconds"
TOTAL_ROW = "TOTAL"


def format_report_row(name: str, r: DerReport) -> str:
    """Percentages to 2 decimals, then the seconds needed to re-aggregate."""
    return (f"{name}\t{100 * r.der:.2f}\t{100 * r.miss:.2f}\t{100 * r.false_alarm:.2f}"
            f"\t{100 * r.confusion:.2f}\t{r.scored_speech:.6f}\t{r.miss_time:.6f}"
            f"\t{r.false_alarm_time:.6f}\t{r.confusion_time:.6f}")


def format_report(per_file: dict[str, DerReport], total: DerReport) -> str:
    rows = [REPORT_HEADER] + [format_report_row(k, r) for k, r in per_file.items()]
    rows.append(format_report_row(TOTAL_ROW, total))
    return "\n".join(rows) + "\n"


def parse_report(lines) -> dict[str, DerReport]:
    """Read per-file rows of a report written by :func:`format_report` (TOTAL is skipped)."""
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line == REPORT_HEADER:
            continue
        fields = line.split("\t")
        if len(fields) != 9:
            raise ParseError(f"line {n}: expected 9 tab-separated fields, got {len(fields)}")
        if fields[0] == TOTAL_ROW:
            continue
        try:
            scored, mi, fa, cf = (Fraction(x) for x in fields[5:])
        except ValueError:
            raise ParseError(f"line {n}: non-numeric seconds field") from None
        out[fields[0]] = DerReport.from_times(mi, fa, cf, scored)
    return out


def score_corpus(references: dict[str, Timeline], hypotheses: dict[str, Timeline],
                 collar: float = 0.25) -> tuple[dict[str, DerReport], DerReport]:
    """Score every reference file id; a missing hypothesis counts as empty."""
    per_file = {}
    for fid in sorted(references):
        per_file[fid] = score_der(references[fid], hypotheses.get(fid, Timeline()), collar)
    return per_file, aggregate(list(per_file.values()))
