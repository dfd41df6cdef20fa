"""Conversational mixture simulation.

Each speaker's track is a chain of exponentially distributed silences and
reverberated utterances; tracks are summed, and tiled background noise is
added at a sampled SNR. A :class:`MixtureRecipe` records every random draw,
so a mixture can be replayed exactly from the same pools.
"""

from __future__ import annotations

import math
import wave
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, convolve_full, mean_power, mix_scale, read_wav, write_wav
from .exceptions import ConfigurationError, DegenerateSignalError, FormatError, UndefinedMetricError
from .timeline import Timeline, write_rttm


@dataclass(frozen=True)
class SimulationConfig:
    n_spk: int = 2
    n_umin: int = 20
    n_umax: int = 40
    beta: float = 2.0
    snr_choices: tuple[float, ...] = (10.0, 15.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "snr_choices", tuple(float(s) for s in self.snr_choices))
        if self.n_spk < 1:
            raise ConfigurationError(f"n_spk must be >= 1, got {self.n_spk}")
        if not 1 <= self.n_umin <= self.n_umax:
            raise ConfigurationError(
                f"need 1 <= n_umin <= n_umax, got {self.n_umin}, {self.n_umax}"
            )
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not self.snr_choices:
            raise ConfigurationError("snr_choices is empty")

    @property
    def noise_enabled(self) -> bool:
        return any(math.isfinite(s) for s in self.snr_choices)


def _wav_length(path) -> int:
    try:
        with wave.open(str(path), "rb") as f:
            return f.getnframes()
    except (wave.Error, EOFError, OSError) as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


@dataclass
class CorpusPools:
    """Speaker utterance lists plus noise and RIR pools.

    Entries are string ids; by default an id is a WAV path. Pools built with
    :meth:`from_waveforms` keep the audio in memory instead.
    """

    speakers: dict[str, list[str]]
    noises: list[str]
    rirs: list[str]
    lengths: dict[str, int] = field(default_factory=dict, repr=False)
    audio: dict[str, Waveform] = field(default_factory=dict, repr=False)

    @classmethod
    def from_manifests(cls, speaker_manifest, noise_manifest=None, rir_manifest=None):
        speakers: dict[str, list[str]] = {}
        for lineno, line in enumerate(Path(speaker_manifest).read_text().splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{speaker_manifest}:{lineno}: expected speaker_id<TAB>wav_path")
            speakers.setdefault(parts[0], []).append(parts[1])

        def one_per_line(path):
            if path is None:
                return []
            return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]

        return cls(speakers, one_per_line(noise_manifest), one_per_line(rir_manifest))

    @classmethod
    def from_waveforms(cls, speakers, noises, rirs):
        """Build pools from ``{speaker: [Waveform, ...]}`` and waveform lists."""
        audio = {}
        spk_ids = {}
        for spk, utts in speakers.items():
            spk_ids[spk] = []
            for i, w in enumerate(utts):
                uid = f"{spk}/{i:04d}"
                audio[uid] = w
                spk_ids[spk].append(uid)
        noise_ids = []
        for i, w in enumerate(noises):
            audio[f"noise/{i:04d}"] = w
            noise_ids.append(f"noise/{i:04d}")
        rir_ids = []
        for i, w in enumerate(rirs):
            audio[f"rir/{i:04d}"] = w
            rir_ids.append(f"rir/{i:04d}")
        lengths = {k: len(w) for k, w in audio.items()}
        return cls(spk_ids, noise_ids, rir_ids, lengths, audio)

    def load(self, uid: str) -> Waveform:
        if uid in self.audio:
            return self.audio[uid]
        try:
            return read_wav(uid)
        except OSError as exc:
            raise OSError(f"cannot read {uid}: {exc}") from exc

    def length(self, uid: str) -> int:
        if uid not in self.lengths:
            self.lengths[uid] = len(self.audio[uid]) if uid in self.audio else _wav_length(uid)
        return self.lengths[uid]

    def validate(self, config: SimulationConfig) -> None:
        if len(self.speakers) < config.n_spk:
            raise ConfigurationError(
                f"pool has {len(self.speakers)} speakers, mixtures need {config.n_spk}"
            )
        if any(not utts for utts in self.speakers.values()):
            raise ConfigurationError("a speaker has an empty utterance list")
        if not self.rirs:
            raise ConfigurationError("RIR pool is empty")
        if config.noise_enabled and not self.noises:
            raise ConfigurationError("noise pool is empty")


@dataclass
class MixtureRecipe:
    """Every random draw behind one mixture."""

    mixture_id: str
    seed: int
    index: int
    sample_rate: int
    speakers: list[str]
    rirs: list[str]
    utterances: list[list[str]]
    intervals: list[list[float]]
    noise: str
    snr: float

    def to_lines(self) -> list[str]:
        lines = [
            f"mixture_id = {self.mixture_id}",
            f"seed = {self.seed}",
            f"index = {self.index}",
            f"sample_rate = {self.sample_rate}",
            f"n_speakers = {len(self.speakers)}",
            f"noise = {self.noise}",
            f"snr = {self.snr!r}",
        ]
        for i, spk in enumerate(self.speakers):
            lines.append(f"speaker.{i} = {spk}")
            lines.append(f"speaker.{i}.rir = {self.rirs[i]}")
            lines.append(f"speaker.{i}.n_utterances = {len(self.utterances[i])}")
            for j, (utt, d) in enumerate(zip(self.utterances[i], self.intervals[i])):
                lines.append(f"speaker.{i}.interval.{j} = {d!r}")
                lines.append(f"speaker.{i}.utterance.{j} = {utt}")
        return lines

    @classmethod
    def from_lines(cls, lines) -> "MixtureRecipe":
        kv = {}
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise FormatError(f"recipe line {lineno}: expected 'key = value'")
            kv[key.strip()] = value.rstrip("\n")
        try:
            n = int(kv["n_speakers"])
            speakers, rirs, utterances, intervals = [], [], [], []
            for i in range(n):
                speakers.append(kv[f"speaker.{i}"])
                rirs.append(kv[f"speaker.{i}.rir"])
                n_u = int(kv[f"speaker.{i}.n_utterances"])
                utterances.append([kv[f"speaker.{i}.utterance.{j}"] for j in range(n_u)])
                intervals.append([float(kv[f"speaker.{i}.interval.{j}"]) for j in range(n_u)])
            return cls(
                mixture_id=kv["mixture_id"],
                seed=int(kv["seed"]),
                index=int(kv["index"]),
                sample_rate=int(kv["sample_rate"]),
                speakers=speakers,
                rirs=rirs,
                utterances=utterances,
                intervals=intervals,
                noise=kv["noise"],
                snr=float(kv["snr"]),
            )
        except KeyError as exc:
            raise FormatError(f"recipe is missing key {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.to_lines()))

    @classmethod
    def load(cls, path) -> "MixtureRecipe":
        return cls.from_lines(Path(path).read_text().splitlines())


@dataclass
class MixtureOutput:
    audio: Waveform
    timeline: Timeline
    stats: dict[str, float]


def mixture_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (corpus seed, mixture index)."""
    return np.random.default_rng([int(seed), int(index)])


def sample_interval(beta: float, rng: np.random.Generator, size=None):
    """Silence length in seconds, drawn from an exponential with mean `beta`."""
    return rng.exponential(beta, size=size)


def sample_recipe(
    config: SimulationConfig,
    pools: CorpusPools,
    index: int = 0,
    mixture_id: str | None = None,
    sample_rate: int = 8000,
) -> MixtureRecipe:
    pools.validate(config)
    rng = mixture_rng(config.seed, index)
    names = sorted(pools.speakers)
    chosen = [names[i] for i in rng.choice(len(names), size=config.n_spk, replace=False)]
    rirs, utterances, intervals = [], [], []
    for spk in chosen:
        rirs.append(pools.rirs[int(rng.integers(len(pools.rirs)))])
        n_u = int(rng.integers(config.n_umin, config.n_umax + 1))
        pool = pools.speakers[spk]
        order = rng.permutation(len(pool))[: min(n_u, len(pool))]
        utterances.append([pool[k] for k in order])
        intervals.append([float(d) for d in sample_interval(config.beta, rng, size=len(order))])
    snr = float(config.snr_choices[int(rng.integers(len(config.snr_choices)))])
    noise = ""
    if math.isfinite(snr):
        noise = pools.noises[int(rng.integers(len(pools.noises)))]
    return MixtureRecipe(
        mixture_id=mixture_id or f"mix{index:06d}",
        seed=config.seed,
        index=index,
        sample_rate=sample_rate,
        speakers=chosen,
        rirs=rirs,
        utterances=utterances,
        intervals=intervals,
        noise=noise,
        snr=snr,
    )


def recipe_timeline(recipe: MixtureRecipe, pools: CorpusPools) -> tuple[Timeline, int]:
    """Reference timeline and mixture length (samples) without rendering audio."""
    sr = recipe.sample_rate
    segments = {}
    total = 0
    for spk, rir, utts, ds in zip(recipe.speakers, recipe.rirs, recipe.utterances, recipe.intervals):
        rir_len = pools.length(rir)
        pos = 0
        segs = []
        for utt, d in zip(utts, ds):
            pos += int(round(d * sr))
            n = pools.length(utt)
            segs.append((pos / sr, (pos + n) / sr))
            pos += n + rir_len - 1
        segments[spk] = segs
        total = max(total, pos)
    return Timeline(segments), total


def render(recipe: MixtureRecipe, pools: CorpusPools) -> MixtureOutput:
    """Synthesize the audio described by `recipe`."""
    sr = recipe.sample_rate
    tracks = []
    for spk, rir_id, utts, ds in zip(
        recipe.speakers, recipe.rirs, recipe.utterances, recipe.intervals
    ):
        rir = pools.load(rir_id)
        pieces = []
        for utt_id, d in zip(utts, ds):
            utt = pools.load(utt_id)
            if utt.sample_rate != sr:
                raise ConfigurationError(f"{utt_id}: sample rate {utt.sample_rate} != {sr}")
            pieces.append(np.zeros(int(round(d * sr))))
            pieces.append(convolve_full(utt, rir).samples)
        tracks.append(np.concatenate(pieces) if pieces else np.zeros(0))
    l_max = max(len(t) for t in tracks)
    y = np.zeros(l_max)
    for t in tracks:
        y[: len(t)] += t
    if math.isfinite(recipe.snr):
        noise = pools.load(recipe.noise).samples
        if len(noise) == 0:
            raise DegenerateSignalError(f"noise {recipe.noise} is empty")
        tiled = np.resize(noise, l_max)
        p = mix_scale(mean_power(y), mean_power(tiled), recipe.snr)
        y = y + p * tiled
    timeline, _ = recipe_timeline(recipe, pools)
    return MixtureOutput(Waveform(y, sr), timeline, mixture_stats(timeline))


def simulate(
    config: SimulationConfig,
    pools: CorpusPools,
    index: int = 0,
    mixture_id: str | None = None,
) -> tuple[MixtureOutput, MixtureRecipe]:
    recipe = sample_recipe(config, pools, index, mixture_id)
    return render(recipe, pools), recipe


def _sweep(timeline: Timeline):
    """Yield (start, end, n_active) for each elementary segment between boundaries."""
    events = []
    for intervals in timeline.values():
        for a, b in intervals:
            events.append((a, 1))
            events.append((b, -1))
    events.sort()
    active = 0
    prev = None
    for t, delta in events:
        if prev is not None and t > prev and active > 0:
            yield prev, t, active
        active += delta
        prev = t


def overlap_ratio(timeline: Timeline) -> float:
    """Time with two or more active speakers over time with at least one."""
    speech = overlap = 0.0
    for a, b, n in _sweep(timeline):
        speech += b - a
        if n >= 2:
            overlap += b - a
    if speech <= 0:
        raise UndefinedMetricError("overlap ratio undefined for a timeline without speech")
    return overlap / speech


def mixture_stats(timeline: Timeline) -> dict[str, float]:
    stats = {
        "overlap_ratio": overlap_ratio(timeline) if len(timeline) else float("nan"),
        "total_speech": timeline.speech_duration(),
    }
    for spk in timeline.speakers:
        stats[f"speech.{spk}"] = timeline.speech_duration(spk)
    return stats


def timeline_to_labels(
    timeline: Timeline,
    frame_shift: float,
    num_frames: int,
    speakers: list[str] | None = None,
    offset: float | None = None,
) -> np.ndarray:
    """Rasterize to a ``num_frames x C`` 0/1 matrix.

    Frame ``t`` is labelled active for a speaker when ``offset + t * frame_shift``
    falls inside one of its intervals. `offset` defaults to half a shift, i.e.
    frame centres. Columns follow `speakers`, or the sorted speaker names.
    """
    if speakers is None:
        speakers = timeline.speakers
    if offset is None:
        offset = frame_shift / 2
    centers = offset + frame_shift * np.arange(num_frames)
    labels = np.zeros((num_frames, len(speakers)), dtype=np.uint8)
    for c, spk in enumerate(speakers):
        for on, off in timeline.get(spk, []):
            labels[(centers >= on) & (centers < off), c] = 1
    return labels


def write_mixture(out_dir, output: MixtureOutput, recipe: MixtureRecipe) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "wav": out_dir / f"{recipe.mixture_id}.wav",
        "rttm": out_dir / f"{recipe.mixture_id}.rttm",
        "recipe": out_dir / f"{recipe.mixture_id}.recipe",
    }
    write_wav(paths["wav"], output.audio)
    write_rttm(paths["rttm"], output.timeline, recipe.mixture_id)
    recipe.save(paths["recipe"])
    return paths


def _build_one(args):
    config, pools, index, out_dir = args
    output, recipe = simulate(config, pools, index)
    paths = write_mixture(out_dir, output, recipe)
    return recipe.mixture_id, paths, output.stats


def build_corpus(config, pools, n_mixtures, out_dir, jobs=1):
    """Simulate `n_mixtures` mixtures into `out_dir` and write ``mixtures.list``.

    The list has one ``id<TAB>wav<TAB>rttm`` line per mixture, in index order
    regardless of `jobs`; file names are relative to `out_dir`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(config, pools, i, out_dir) for i in range(n_mixtures)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_build_one, tasks))
    else:
        results = [_build_one(t) for t in tasks]
    manifest = out_dir / "mixtures.list"
    manifest.write_text(
        "".join(f"{mid}\t{p['wav'].name}\t{p['rttm'].name}\n" for mid, p, _ in results)
    )
    return manifest, [stats for _, _, stats in results]
