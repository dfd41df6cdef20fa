"""Model inputs: spliced, subsampled log-mel frames and aligned labels."""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import FRAME_LENGTH, FRAME_SHIFT, MelFilterbank, Waveform, stft_logmel
from .exceptions import ConfigurationError, FormatError
from .simulation import timeline_to_labels
from .timeline import Timeline


def splice(frames: np.ndarray, left: int = 7, right: int = 7) -> np.ndarray:
    """Stack each row with its `left` predecessors and `right` successors.

    Out-of-range neighbours repeat the first/last row.
    """
    frames = np.asarray(frames)
    T = frames.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-left, right + 1)[None, :], 0, T - 1)
    return frames[idx].reshape(T, -1)


def subsample(frames: np.ndarray, factor: int = 10) -> np.ndarray:
    if factor < 1:
        raise ConfigurationError(f"subsampling factor must be >= 1, got {factor}")
    return frames[::factor]


def num_output_frames(n_samples: int, sample_rate: int = 8000, subsampling: int = 10,
                      frame_length: float = FRAME_LENGTH, frame_shift: float = FRAME_SHIFT) -> int:
    frame_len = int(round(frame_length * sample_rate))
    shift = int(round(frame_shift * sample_rate))
    if n_samples < frame_len:
        return 0
    return math.ceil((1 + (n_samples - frame_len) // shift) / subsampling)


def align_labels(timeline: Timeline, num_frames: int, effective_shift: float = 0.1,
                 speakers=None, frame_length: float = FRAME_LENGTH) -> np.ndarray:
    """Labels at the centre time of each kept (first-of-group) analysis frame."""
    return timeline_to_labels(
        timeline, effective_shift, num_frames, speakers=speakers, offset=frame_length / 2
    )


class LogMelFeaturizer(BaseEstimator, TransformerMixin):
    """Waveforms -> spliced and subsampled log-mel sequences.

    Stateless: ``fit`` only records the output width. ``transform`` takes a
    list of :class:`~eend.audio.Waveform` (or 1-D arrays at `sample_rate`) and
    returns a list of ``T_i x n_mels*(context_left+context_right+1)`` arrays.
    """

    def __init__(self, n_mels=23, sample_rate=8000, frame_length=FRAME_LENGTH,
                 frame_shift=FRAME_SHIFT, fft_size=256, context_left=7,
                 context_right=7, subsampling=10, log_floor=1e-10):
        self.n_mels = n_mels
        self.sample_rate = sample_rate
        self.frame_length = frame_length
        self.frame_shift = frame_shift
        self.fft_size = fft_size
        self.context_left = context_left
        self.context_right = context_right
        self.subsampling = subsampling
        self.log_floor = log_floor

    @property
    def effective_shift(self) -> float:
        return self.frame_shift * self.subsampling

    def fit(self, X=None, y=None):
        self.filterbank_ = MelFilterbank(self.n_mels, self.fft_size, self.sample_rate)
        self.n_features_out_ = self.n_mels * (self.context_left + self.context_right + 1)
        return self

    def _as_waveform(self, x):
        if isinstance(x, Waveform):
            if x.sample_rate != self.sample_rate:
                raise ConfigurationError(
                    f"waveform at {x.sample_rate} Hz, featurizer expects {self.sample_rate} Hz"
                )
            return x
        return Waveform(np.asarray(x, dtype=np.float64), self.sample_rate)

    def transform_one(self, x) -> np.ndarray:
        if not hasattr(self, "filterbank_"):
            self.fit()
        w = self._as_waveform(x)
        logmel = stft_logmel(w, self.frame_length, self.frame_shift, self.filterbank_,
                             self.log_floor)
        spliced = splice(logmel, self.context_left, self.context_right)
        return subsample(spliced, self.subsampling)

    def transform(self, X):
        if isinstance(X, (Waveform, np.ndarray)) and np.ndim(getattr(X, "samples", X)) == 1:
            X = [X]
        return [self.transform_one(x) for x in X]

    def labels_for(self, timeline: Timeline, num_frames: int, speakers=None) -> np.ndarray:
        return align_labels(timeline, num_frames, self.effective_shift, speakers,
                            self.frame_length)


# Matrix archive: magic, version, rows, cols, element size, then row-major
# little-endian data. Element size 1 -> uint8, 4 -> float32, 8 -> float64.
_MAGIC = b"EMAT"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQI")
_DTYPES = {1: np.dtype("u1"), 4: np.dtype("<f4"), 8: np.dtype("<f8")}


def write_matrix(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ConfigurationError(f"matrix must be 2-D, got shape {data.shape}")
    if data.dtype in (np.uint8, np.bool_, np.int8):
        arr = data.astype("u1")
    elif data.dtype == np.float32:
        arr = data.astype("<f4")
    else:
        arr = data.astype("<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, arr.shape[0], arr.shape[1], arr.itemsize))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated matrix header")
    magic, version, rows, cols, size = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise FormatError(f"{path}: not a matrix archive (magic={magic!r}, version={version})")
    if size not in _DTYPES:
        raise FormatError(f"{path}: unsupported element size {size}")
    body = raw[_HEADER.size:]
    if len(body) != rows * cols * size:
        raise FormatError(f"{path}: expected {rows * cols * size} data bytes, got {len(body)}")
    return np.frombuffer(body, dtype=_DTYPES[size]).reshape(rows, cols).copy()


def read_pair_manifest(path) -> list[tuple[Path, Path]]:
    """``feature_path<TAB>label_path`` lines; relative paths resolve against the manifest."""
    base = Path(path).parent
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected feature_path<TAB>label_path")
        pairs.append(tuple(base / p for p in parts))
    return pairs


def load_dataset(manifest) -> list[tuple[np.ndarray, np.ndarray]]:
    data = []
    for feat_path, label_path in read_pair_manifest(manifest):
        X = read_matrix(feat_path).astype(np.float64)
        Y = read_matrix(label_path)
        if X.shape[0] != Y.shape[0]:
            raise FormatError(
                f"{feat_path}: {X.shape[0]} feature rows but {label_path} has {Y.shape[0]}"
            )
        data.append((X, Y))
    return data
