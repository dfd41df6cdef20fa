"""Adam optimization of the diarization model over sequence datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses, nn
from .exceptions import ConfigurationError, ShapeError, TrainingError
from .model import DiarizationModel, param_names

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 10
    epochs: int = 20
    alpha: float = 0.5
    seed: int = 0
    permutation_free: bool = True
    grad_clip: float | None = None
    checkpoint_dir: str | None = None
    prob_clamp: float = losses.PROB_CLAMP

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ConfigurationError(f"prob_clamp must lie in (0, 0.5), got {self.prob_clamp}")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied to `params` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sequence_loss(model: DiarizationModel, X, Y, alpha: float, permutation_free: bool = True,
                  tape: nn.Tape | None = None, eps: float = losses.PROB_CLAMP):
    """Record one sequence's objective on `tape`.

    Returns ``(j_multi_node, j_pit, j_dc)``; ``j_dc`` is NaN when alpha is 0,
    since the embedding branch is then not evaluated at all.
    """
    if tape is None:
        tape = nn.Tape()
    z, v = model.forward_tape(tape, X, with_embedding=alpha > 0)
    j_pit, _ = losses.pit_loss_node(Y, z, permutation_free, eps)
    if alpha > 0:
        j_dc = losses.dpcl_loss_node(v, Y)
        total = losses.multi_loss(j_pit, j_dc, alpha)
        return total, float(j_pit.value), float(j_dc.value)
    return j_pit, float(j_pit.value), float("nan")


def sequence_gradients(model, X, Y, alpha, permutation_free=True, eps=losses.PROB_CLAMP):
    tape = nn.Tape()
    total, j_pit, j_dc = sequence_loss(model, X, Y, alpha, permutation_free, tape, eps)
    grads = tape.backward(total)
    for name in model.params:
        if name not in grads:
            grads[name] = np.zeros_like(model.params[name])
    return grads, {"pit": j_pit, "dc": j_dc, "multi": float(total.value)}


def evaluate(model: DiarizationModel, data, alpha: float = 0.5,
             permutation_free: bool = True, eps: float = losses.PROB_CLAMP) -> dict[str, float]:
    """Mean objectives over `data` without recording gradients."""
    rows = []
    for X, Y in data:
        total, j_pit, j_dc = sequence_loss(model, X, Y, alpha, permutation_free,
                                           nn.Tape(record=False), eps)
        rows.append((j_pit, j_dc, float(total.value)))
    arr = np.array(rows)
    return {"pit": float(arr[:, 0].mean()), "dc": float(arr[:, 1].mean()),
            "multi": float(arr[:, 2].mean())}


def _check_data(model, data):
    if not data:
        raise ConfigurationError("training data is empty")
    C = model.config.num_speakers
    for i, (X, Y) in enumerate(data):
        if np.shape(Y)[1] != C:
            raise ConfigurationError(
                f"sequence {i}: labels have {np.shape(Y)[1]} speakers, model expects {C}"
            )
        if np.shape(X)[0] != np.shape(Y)[0]:
            raise ShapeError(f"sequence {i}: {np.shape(X)[0]} frames vs {np.shape(Y)[0]} labels")


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    state: AdamState = field(default_factory=AdamState)


LOSS_LOG_HEADER = "epoch\tsteps\tpit\tdc\tmulti"


def format_loss_log(history: list[dict]) -> str:
    lines = [LOSS_LOG_HEADER]
    for row in history:
        lines.append(
            f"{row['epoch']}\t{row['steps']}\t{row['pit']:.10g}\t{row['dc']:.10g}\t{row['multi']:.10g}"
        )
    return "\n".join(lines) + "\n"


def train(model: DiarizationModel, data, config: TrainConfig,
          state: AdamState | None = None, log_name: str = "loss.log") -> TrainResult:
    """Optimize `model` in place on ``[(features, labels), ...]``.

    Each minibatch averages per-sequence gradients in a fixed order, so a
    given seed always reproduces the same parameters. When
    ``config.checkpoint_dir`` is set, one checkpoint per epoch and a
    tab-separated loss log are written there.
    """
    _check_data(model, data)
    state = state or AdamState()
    result = TrainResult(state=state)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    names = param_names(model.config)
    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = np.zeros(3)
        steps = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start:start + config.batch_size]
            acc = {k: np.zeros_like(model.params[k]) for k in names}
            for i in batch:
                grads, values = sequence_gradients(model, *data[i], config.alpha,
                                                   config.permutation_free, config.prob_clamp)
                for k in names:
                    acc[k] += grads[k]
                sums += [values["pit"], values["dc"], values["multi"]]
                if not np.isfinite(values["multi"]):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {b} (sequence {int(i)})"
                    )
            for k in names:
                acc[k] /= len(batch)
            if not all(np.all(np.isfinite(g)) for g in acc.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {b}")
            if config.grad_clip is not None:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in acc.values()))
                if norm > config.grad_clip:
                    for k in names:
                        acc[k] *= config.grad_clip / norm
            adam_step(model.params, acc, state, config.lr)
            steps += 1
        means = sums / n
        row = {"epoch": epoch, "steps": state.step, "pit": means[0], "dc": means[1],
               "multi": means[2]}
        result.history.append(row)
        logger.info("epoch %d: pit=%.5f dc=%.5g multi=%.5g", epoch, *means)
        if ckpt_dir is not None:
            path = ckpt_dir / f"epoch{epoch:03d}.ckpt"
            model.save(path)
            result.checkpoints.append(path)
            (ckpt_dir / log_name).write_text(format_loss_log(result.history))
    return result


def adapt(model_or_checkpoint, data, config: TrainConfig | None = None,
          output_path=None) -> tuple[DiarizationModel, TrainResult]:
    """Continue training a trained model at a low learning rate with fresh Adam moments."""
    if config is None:
        config = TrainConfig(lr=1e-6, epochs=5)
    if isinstance(model_or_checkpoint, DiarizationModel):
        model = model_or_checkpoint.copy()
    else:
        model = DiarizationModel.load(model_or_checkpoint)
    result = train(model, data, config, log_name="adapt_loss.log")
    if output_path is not None:
        model.save(output_path)
    return model, result
