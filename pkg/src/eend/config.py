"""Run configuration: one flat INI file with typed sections.

Every key has a default, so an empty file (or none at all) is valid.
Unknown sections or keys are rejected with the offending name.
"""

from __future__ import annotations

import configparser
import math
from pathlib import Path

from .exceptions import ConfigurationError
from .features import LogMelFeaturizer
from .losses import PROB_CLAMP
from .model import ModelConfig
from .simulation import SimulationConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "paths": {
        "speakers": (str, ""),
        "noises": (str, ""),
        "rirs": (str, ""),
    },
    "simulation": {
        "n_spk": (int, 2),
        "n_umin": (int, 20),
        "n_umax": (int, 40),
        "beta": (float, 2.0),
        "snr_choices": (_float_list, (10.0, 15.0, 20.0)),
        "seed": (int, 0),
        "n_mixtures": (int, 100),
    },
    "features": {
        "n_mels": (int, 23),
        "sample_rate": (int, 8000),
        "frame_length": (float, 0.025),
        "frame_shift": (float, 0.01),
        "fft_size": (int, 256),
        "context_left": (int, 7),
        "context_right": (int, 7),
        "subsampling": (int, 10),
        "log_floor": (float, 1e-10),
    },
    "model": {
        "num_layers": (int, 5),
        "hidden_size": (int, 256),
        "num_speakers": (int, 2),
        "embed_dim": (int, 256),
        "embed_layer": (int, 2),
        "seed": (int, 0),
    },
    "loss": {
        "alpha": (float, 0.5),
        "prob_clamp": (float, PROB_CLAMP),
        "permutation_free": (_bool, True),
    },
    "train": {
        "lr": (float, 1e-3),
        "batch_size": (int, 10),
        "epochs": (int, 20),
        "seed": (int, 0),
        "grad_clip": (_optional_float, None),
    },
    "adapt": {
        "lr": (float, 1e-6),
        "batch_size": (int, 10),
        "epochs": (int, 5),
        "seed": (int, 0),
    },
    "inference": {
        "threshold": (float, 0.5),
        "median_width": (int, 11),
    },
    "scoring": {
        "collar": (float, 0.25),
    },
}


class RunConfig:
    """Parsed configuration; ``cfg[section][key]`` gives the typed value."""

    def __init__(self, values: dict[str, dict] | None = None):
        self.values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for section, keys in (values or {}).items():
            for key, value in keys.items():
                self.set(section, key, value)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown config key {section}.{key}")
        parser = SCHEMA[section][key][0]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigurationError(f"{section}.{key}: {exc}") from None
        self.values[section][key] = value

    def override(self, assignments) -> "RunConfig":
        """Apply ``section.key=value`` strings in order."""
        for item in assignments or ():
            name, sep, value = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot:
                raise ConfigurationError(f"override must look like section.key=value, got {item!r}")
            self.set(section, key, value.strip())
        return self

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set(section, key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def to_text(self) -> str:
        """Canonical form: every section and key in schema order."""
        lines = []
        for section, keys in SCHEMA.items():
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
            lines += [f"{key} = {_format(self.values[section][key])}" for key in keys]
        return "\n".join(lines) + "\n"

    # Builders for the component configurations.

    def simulation(self) -> SimulationConfig:
        s = dict(self.values["simulation"])
        s.pop("n_mixtures")
        return SimulationConfig(**s)

    def featurizer(self) -> LogMelFeaturizer:
        return LogMelFeaturizer(**self.values["features"]).fit()

    def model(self) -> ModelConfig:
        m = {k: v for k, v in self.values["model"].items() if k != "seed"}
        f = self.values["features"]
        input_dim = f["n_mels"] * (f["context_left"] + f["context_right"] + 1)
        return ModelConfig(**m, input_dim=input_dim)

    def train(self, section: str = "train", checkpoint_dir=None) -> TrainConfig:
        t = self.values[section]
        loss = self.values["loss"]
        return TrainConfig(lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"],
                           alpha=loss["alpha"], seed=t["seed"],
                           permutation_free=loss["permutation_free"],
                           grad_clip=t.get("grad_clip"),
                           checkpoint_dir=None if checkpoint_dir is None else str(checkpoint_dir),
                           prob_clamp=loss["prob_clamp"])
