"""scikit-learn compatible wrapper around model, training and post-processing."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError
from .inference import median_filter
from .losses import pit_loss
from .model import DiarizationModel, ModelConfig, predict_from_posteriors
from .training import AdamState, TrainConfig, train
from .validation import check_label_sequences, check_sequences


class EENDDiarizer(BaseEstimator):
    """End-to-end neural diarizer over pre-computed feature sequences.

    ``X`` is a list of ``T_i x F`` feature matrices and ``y`` a list of
    matching ``T_i x C`` speaker-activity matrices. Column order of ``y`` is
    irrelevant under the default permutation-free objective.

    Parameters
    ----------
    n_layers, hidden_size, embed_dim, embed_layer : int
        BLSTM depth and width, embedding size and the (1-based) layer the
        embedding branch reads from.
    n_speakers : int
        Number of output channels ``C``.
    alpha : float
        Weight of the deep-clustering term; 0 trains on the PIT loss alone.
    permutation_free : bool
        False trains with the labels' given column order (ablation baseline).
    lr, batch_size, epochs : training schedule for Adam.
    threshold, median_width : post-processing applied by :meth:`predict`.
    warm_start : bool
        Continue from the current parameters and Adam state on repeated ``fit``.
    """

    def __init__(self, n_layers=5, hidden_size=256, n_speakers=2, embed_dim=256,
                 embed_layer=2, alpha=0.5, permutation_free=True, lr=1e-3, batch_size=10,
                 epochs=20, threshold=0.5, median_width=11, random_state=0,
                 warm_start=False, grad_clip=None, checkpoint_dir=None):
        self.n_layers = n_layers
        self.hidden_size = hidden_size
        self.n_speakers = n_speakers
        self.embed_dim = embed_dim
        self.embed_layer = embed_layer
        self.alpha = alpha
        self.permutation_free = permutation_free
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.threshold = threshold
        self.median_width = median_width
        self.random_state = random_state
        self.warm_start = warm_start
        self.grad_clip = grad_clip
        self.checkpoint_dir = checkpoint_dir

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           alpha=self.alpha, seed=self.random_state,
                           permutation_free=self.permutation_free, grad_clip=self.grad_clip,
                           checkpoint_dir=self.checkpoint_dir)

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_label_sequences(y, X, self.n_speakers)
        n_features = X[0].shape[1]
        X = check_sequences(X, n_features)
        if self.warm_start and hasattr(self, "model_"):
            if n_features != self.n_features_in_:
                raise ConfigurationError(
                    f"warm start with {n_features} features, model has {self.n_features_in_}"
                )
        else:
            config = ModelConfig(self.n_layers, self.hidden_size, self.n_speakers,
                                 self.embed_dim, self.embed_layer, n_features)
            self.model_ = DiarizationModel(config, seed=self.random_state)
            self.adam_state_ = AdamState()
            self.loss_log_ = []
            self.n_features_in_ = n_features
        result = train(self.model_, list(zip(X, y)), self._train_config(), self.adam_state_)
        self.loss_log_ = self.loss_log_ + result.history
        return self

    @classmethod
    def from_model(cls, model: DiarizationModel, **params) -> "EENDDiarizer":
        """Wrap an already trained model (e.g. one loaded from a checkpoint)."""
        c = model.config
        est = cls(n_layers=c.num_layers, hidden_size=c.hidden_size, n_speakers=c.num_speakers,
                  embed_dim=c.embed_dim, embed_layer=c.embed_layer, **params)
        est.model_ = model
        est.adam_state_ = AdamState()
        est.loss_log_ = []
        est.n_features_in_ = c.input_dim
        return est

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.n_features_in_)
        return [self.model_.forward(x, with_embedding=False)[0] for x in X]

    def predict(self, X) -> list[np.ndarray]:
        """Thresholded, median-filtered 0/1 activity per sequence."""
        return [median_filter(predict_from_posteriors(z, self.threshold), self.median_width)
                for z in self.predict_proba(X)]

    def transform(self, X) -> list[np.ndarray]:
        """Unit-norm frame embeddings from the clustering branch."""
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.n_features_in_)
        return [self.model_.forward(x)[1] for x in X]

    def score(self, X, y) -> float:
        """Negative mean permutation-free BCE (higher is better)."""
        probs = self.predict_proba(X)
        y = check_label_sequences(y, check_sequences(X), self.n_speakers)
        return -float(np.mean([pit_loss(labels, z)[0] for labels, z in zip(y, probs)]))
