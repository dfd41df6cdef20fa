"""Stacked BLSTM with a per-speaker sigmoid head and a deep-clustering embedding branch."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .exceptions import ConfigurationError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 5
    hidden_size: int = 256
    num_speakers: int = 2
    embed_dim: int = 256
    embed_layer: int = 2
    input_dim: int = 345

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "num_speakers", "embed_dim", "input_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 1 <= self.embed_layer <= self.num_layers:
            raise ConfigurationError(
                f"embed_layer must lie in [1, {self.num_layers}], got {self.embed_layer}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def param_names(config: ModelConfig) -> list[str]:
    names = []
    for p in range(config.num_layers):
        for direction in ("fw", "bw"):
            names += [f"blstm{p}.{direction}.{w}" for w in ("W_ih", "W_hh", "b")]
    return names + ["output.W", "output.b", "embed.W", "embed.b"]


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)) weights, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    in_dim = config.input_dim
    H = config.hidden_size
    for p in range(config.num_layers):
        for direction in ("fw", "bw"):
            lp = nn.LstmParams.init(in_dim, H, rng)
            params[f"blstm{p}.{direction}.W_ih"] = lp.W_ih
            params[f"blstm{p}.{direction}.W_hh"] = lp.W_hh
            params[f"blstm{p}.{direction}.b"] = lp.b
        in_dim = 2 * H
    k = 1.0 / np.sqrt(2 * H)
    params["output.W"] = rng.uniform(-k, k, (config.num_speakers, 2 * H))
    params["output.b"] = rng.uniform(-k, k, config.num_speakers)
    params["embed.W"] = rng.uniform(-k, k, (config.embed_dim, 2 * H))
    params["embed.b"] = rng.uniform(-k, k, config.embed_dim)
    return params


class DiarizationModel:
    """Parameters plus the forward computation.

    ``forward`` maps a ``T x input_dim`` feature matrix to ``T x C`` speech
    posteriors and ``T x D`` unit-norm embeddings. The embedding branch taps
    the output of BLSTM layer ``embed_layer`` (1-based).
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        missing = set(param_names(config)) - set(self.params)
        if missing:
            raise ConfigurationError(f"missing parameters: {sorted(missing)}")
        for name, shape in self.expected_shapes().items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.params[name].shape}")

    def expected_shapes(self) -> dict[str, tuple]:
        c = self.config
        shapes = {}
        in_dim = c.input_dim
        for p in range(c.num_layers):
            for d in ("fw", "bw"):
                shapes[f"blstm{p}.{d}.W_ih"] = (4 * c.hidden_size, in_dim)
                shapes[f"blstm{p}.{d}.W_hh"] = (4 * c.hidden_size, c.hidden_size)
                shapes[f"blstm{p}.{d}.b"] = (4 * c.hidden_size,)
            in_dim = 2 * c.hidden_size
        shapes["output.W"] = (c.num_speakers, 2 * c.hidden_size)
        shapes["output.b"] = (c.num_speakers,)
        shapes["embed.W"] = (c.embed_dim, 2 * c.hidden_size)
        shapes["embed.b"] = (c.embed_dim,)
        return shapes

    def forward_tape(self, tape: nn.Tape, features, with_embedding: bool = True):
        """Record the forward pass on `tape`; returns ``(z, v)`` nodes (``v`` may be None)."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"expected T x {self.config.input_dim} features, got {features.shape}"
            )
        if features.shape[0] == 0:
            raise ShapeError("empty feature sequence")
        q = self.config.embed_layer
        var = {}

        def param(name):
            if name not in var:
                var[name] = tape.variable(self.params[name], name)
            return var[name]

        h = tape.constant(features)
        tap = None
        for p in range(self.config.num_layers):
            fw = tuple(param(f"blstm{p}.fw.{w}") for w in ("W_ih", "W_hh", "b"))
            bw = tuple(param(f"blstm{p}.bw.{w}") for w in ("W_ih", "W_hh", "b"))
            h = nn.blstm(h, fw, bw)
            if p + 1 == q:
                tap = h
        z = nn.sigmoid(nn.affine(h, param("output.W"), param("output.b")))
        v = None
        if with_embedding:
            v = nn.l2_normalize_rows(nn.tanh(nn.affine(tap, param("embed.W"), param("embed.b"))))
        return z, v

    def forward(self, features, with_embedding: bool = True):
        z, v = self.forward_tape(nn.Tape(record=False), features, with_embedding)
        return z.value, (v.value if v is not None else None)

    def predict(self, features, threshold: float = 0.5) -> np.ndarray:
        """Frame decisions ``posterior > threshold`` (ties are non-speech)."""
        z, _ = self.forward(features, with_embedding=False)
        return predict_from_posteriors(z, threshold)

    def save(self, path) -> None:
        nn.save_params(path, {k: self.params[k] for k in param_names(self.config)},
                       {"format": "eend-model", "model": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "DiarizationModel":
        params, meta = nn.load_params(path)
        if meta.get("format") != "eend-model" or "model" not in meta:
            raise ConfigurationError(f"{path}: checkpoint has no model configuration block")
        return cls(ModelConfig.from_dict(meta["model"]), params)

    def copy(self) -> "DiarizationModel":
        return DiarizationModel(self.config, {k: v.copy() for k, v in self.params.items()})


def predict_from_posteriors(posteriors, threshold: float) -> np.ndarray:
    return (np.asarray(posteriors) > threshold).astype(np.uint8)
