"""From posteriors to RTTM: threshold, median smoothing, run-length segments."""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import median_filter as _nd_median

from .audio import read_wav
from .exceptions import ConfigurationError, EendError
from .features import LogMelFeaturizer
from .model import DiarizationModel, predict_from_posteriors
from .timeline import RTTM_TEMPLATE, Timeline


class Segment(NamedTuple):
    speaker: str
    onset: float
    duration: float


def median_filter(decisions, width: int = 11) -> np.ndarray:
    """Per-channel running median over `width` frames with edge replication.

    For 0/1 input this is a sliding majority vote.
    """
    decisions = np.asarray(decisions)
    if width < 1 or width % 2 == 0:
        raise ConfigurationError(f"median filter width must be odd and positive, got {width}")
    if decisions.ndim != 2:
        raise ConfigurationError(f"expected T x C decisions, got shape {decisions.shape}")
    if width == 1 or decisions.shape[0] == 0:
        return decisions.copy()
    return _nd_median(decisions, size=(width, 1), mode="nearest")


def default_speaker_names(n: int) -> list[str]:
    return [f"spk{i}" for i in range(n)]


def decisions_to_segments(decisions, effective_shift: float = 0.1,
                          speaker_names=None) -> list[Segment]:
    """Each maximal run of active frames becomes one segment, ordered by onset."""
    decisions = np.asarray(decisions).astype(bool)
    T, C = decisions.shape
    names = speaker_names or default_speaker_names(C)
    segments = []
    for c in range(C):
        padded = np.concatenate([[False], decisions[:, c], [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        for start, stop in zip(edges[::2], edges[1::2]):
            segments.append(Segment(names[c], start * effective_shift,
                                    (stop - start) * effective_shift))
    segments.sort(key=lambda s: (s.onset, s.speaker))
    return segments


def segments_to_timeline(segments) -> Timeline:
    out: dict[str, list] = {}
    for s in segments:
        out.setdefault(s.speaker, []).append((s.onset, s.onset + s.duration))
    return Timeline(out)


def segments_to_rttm(segments, file_id: str) -> list[str]:
    return [RTTM_TEMPLATE.format(file_id=file_id, onset=s.onset, duration=s.duration,
                                 speaker=s.speaker) for s in segments]


def diarize_features(model: DiarizationModel, features, threshold: float = 0.5,
                     median_width: int = 11) -> np.ndarray:
    z, _ = model.forward(features, with_embedding=False)
    return median_filter(predict_from_posteriors(z, threshold), median_width)


def infer_file(model, wav_path, threshold: float = 0.5, median_width: int = 11,
               featurizer: LogMelFeaturizer | None = None, file_id: str | None = None) -> list[str]:
    """Diarize one WAV file and return its RTTM lines.

    `model` is a :class:`DiarizationModel` or a checkpoint path.
    """
    wav_path = Path(wav_path)
    file_id = file_id or wav_path.stem
    try:
        if not isinstance(model, DiarizationModel):
            model = DiarizationModel.load(model)
        featurizer = featurizer or LogMelFeaturizer()
        features = featurizer.transform_one(read_wav(wav_path))
        decisions = diarize_features(model, features, threshold, median_width)
    except (EendError, OSError) as exc:
        raise type(exc)(f"{wav_path}: {exc}") from exc
    segments = decisions_to_segments(decisions, featurizer.effective_shift)
    return segments_to_rttm(segments, file_id)
