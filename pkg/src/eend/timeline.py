"""Speaker-attributed interval sets and the RTTM text format."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

from .exceptions import ParseError

RTTM_TEMPLATE = "SPEAKER {file_id} 1 {onset:.2f} {duration:.2f} <NA> <NA> {speaker} <NA> <NA>"


def merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Sort intervals and merge those that overlap or touch; drop empty ones."""
    merged: list[list[float]] = []
    for on, off in sorted((float(a), float(b)) for a, b in intervals):
        if off <= on:
            continue
        if merged and on <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], off)
        else:
            merged.append([on, off])
    return [(a, b) for a, b in merged]


class Timeline(Mapping):
    """Immutable mapping ``speaker -> sorted, merged [(onset, offset), ...]`` in seconds.

    Speakers without any positive-length interval are dropped.
    """

    def __init__(self, segments: Mapping[str, Iterable[tuple[float, float]]] | None = None):
        data = {}
        for speaker, intervals in (segments or {}).items():
            if any(a < 0 or b < 0 for a, b in intervals):
                raise ValueError(f"negative time in intervals of speaker {speaker!r}")
            merged = merge_intervals(intervals)
            if merged:
                data[str(speaker)] = merged
        self._data = dict(sorted(data.items()))

    def __getitem__(self, speaker):
        return self._data[speaker]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __eq__(self, other):
        if isinstance(other, Timeline):
            return self._data == other._data
        return NotImplemented

    def __repr__(self):
        return f"Timeline({self._data!r})"

    @property
    def speakers(self) -> list[str]:
        return list(self._data)

    @property
    def end(self) -> float:
        return max((iv[-1][1] for iv in self._data.values()), default=0.0)

    def speech_duration(self, speaker: str | None = None) -> float:
        """Summed interval length for one speaker, or over all speakers (overlap counted twice)."""
        if speaker is not None:
            return sum(b - a for a, b in self._data.get(speaker, []))
        return sum(self.speech_duration(s) for s in self._data)

    def relabel(self, mapping: Mapping[str, str]) -> "Timeline":
        out: dict[str, list] = {}
        for speaker, intervals in self._data.items():
            out.setdefault(mapping.get(speaker, speaker), []).extend(intervals)
        return Timeline(out)

    def to_rttm(self, file_id: str) -> list[str]:
        lines = []
        for speaker, intervals in self._data.items():
            for on, off in intervals:
                lines.append(
                    RTTM_TEMPLATE.format(
                        file_id=file_id, onset=on, duration=off - on, speaker=speaker
                    )
                )
        lines.sort(key=lambda line: (float(line.split()[3]), line.split()[7]))
        return lines


def parse_rttm(lines: Iterable[str]) -> dict[str, Timeline]:
    """Parse RTTM ``SPEAKER`` lines into one Timeline per file id.

    Blank lines, ``#`` comments and non-``SPEAKER`` record types are skipped.
    """
    per_file: dict[str, dict[str, list]] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise ParseError(f"expected at least 8 fields, got {len(fields)}", lineno)
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError as exc:
            raise ParseError(f"bad onset/duration {fields[3]!r} {fields[4]!r}", lineno) from exc
        if onset < 0 or duration < 0:
            raise ParseError("negative onset or duration", lineno)
        per_file.setdefault(fields[1], {}).setdefault(fields[7], []).append(
            (onset, onset + duration)
        )
    return {fid: Timeline(segs) for fid, segs in sorted(per_file.items())}


def timeline_from_rttm(lines: Iterable[str]) -> Timeline:
    """Merged timeline of every speaker in `lines`, regardless of file id."""
    merged: dict[str, list] = {}
    for tl in parse_rttm(lines).values():
        for speaker, intervals in tl.items():
            merged.setdefault(speaker, []).extend(intervals)
    return Timeline(merged)


def read_rttm(path) -> dict[str, Timeline]:
    with open(path) as f:
        return parse_rttm(f)


def write_rttm(path, timeline: Timeline, file_id: str) -> None:
    lines = timeline.to_rttm(file_id)
    with open(path, "w") as f:
        f.write("".join(line + "\n" for line in lines))
