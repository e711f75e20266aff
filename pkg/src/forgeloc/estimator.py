"""scikit-learn style front end for training and localisation."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .datagen import LABELS
from .localize import softmax
from .network import Network
from .pipeline import predict_episodes
from .training import Trainer, load_checkpoint, network_from_checkpoint
from .validation import as_episodes, check_channels

_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


class ForgeryLocalizer(BaseEstimator):
    """Weakly supervised forgery localiser.

    ``fit`` takes episodes (or ``(visual, audio)`` pairs plus ``y`` labels
    from ``LABELS``) and uses only video-level labels. ``predict`` returns the
    routed video label, ``localize`` the ranked ``(start, end, confidence)``
    proposals, ``transform`` per-frame reconstruction errors.

    Any RunConfig field not exposed as an argument can be set via ``config``.
    """

    def __init__(self, epochs=30, mask_ratio=0.75, hotspot_k=10, lr=1e-3, batch_size=32,
                 rec_score_weight=0.0, seed=0, config=None):
        self.epochs = epochs
        self.mask_ratio = mask_ratio
        self.hotspot_k = hotspot_k
        self.lr = lr
        self.batch_size = batch_size
        self.rec_score_weight = rec_score_weight
        self.seed = seed
        self.config = config

    def _run_config(self) -> RunConfig:
        base = self.config
        if base is None:
            cfg = RunConfig()
        elif isinstance(base, RunConfig):
            cfg = base
        else:
            cfg = RunConfig.from_dict(dict(base))
        own = {k: v for k, v in self.get_params(deep=False).items() if k in _CONFIG_FIELDS}
        return cfg.override(**own).validate()

    def fit(self, X, y=None):
        episodes = as_episodes(X, y)
        cfg = self._run_config()
        trainer = Trainer(cfg, episodes[0].visual.C, episodes[0].audio.C)
        result = trainer.fit(episodes)
        self.network_ = result.network
        self.training_log_ = [e.__dict__.copy() for e in result.logs]
        self.n_features_in_ = (episodes[0].visual.C, episodes[0].audio.C)
        self.classes_ = np.array(LABELS)
        return self

    @classmethod
    def from_checkpoint(cls, path, config=None) -> "ForgeryLocalizer":
        cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(config or {})
        est = cls(epochs=cfg.epochs, mask_ratio=cfg.mask_ratio, hotspot_k=cfg.hotspot_k, lr=cfg.lr,
                  batch_size=cfg.batch_size, rec_score_weight=cfg.rec_score_weight, seed=cfg.seed, config=cfg)
        net = network_from_checkpoint(load_checkpoint(path), cfg)
        est.network_ = net
        est.training_log_ = []
        est.n_features_in_ = (net.c_visual, net.c_audio)
        est.classes_ = np.array(LABELS)
        return est

    def _inference_network(self) -> Network:
        check_is_fitted(self, "network_")
        cfg = self._run_config()
        net = self.network_
        return net if net.config == cfg else Network(cfg, net.c_visual, net.c_audio, net.store)

    def _predict(self, X):
        check_is_fitted(self, "network_")
        episodes = as_episodes(X)
        check_channels(episodes, *self.n_features_in_)
        return predict_episodes(self._inference_network(), episodes)

    def predict(self, X) -> np.ndarray:
        return np.array([p.decision.label for p in self._predict(X)])

    def predict_proba(self, X) -> np.ndarray:
        """(n, 4) video-level class probabilities from the main head."""
        return np.stack([softmax(p.inference.h1_video) for p in self._predict(X)])

    def localize(self, X) -> list[list[tuple[int, int, float]]]:
        return [[(q.start, q.end, q.confidence) for q in p.proposals] for p in self._predict(X)]

    def transform(self, X) -> list[np.ndarray]:
        """Per-video (T, 2) reconstruction errors, columns visual then audio."""
        return [np.stack([p.inference.recon_err["visual"], p.inference.recon_err["audio"]], axis=1)
                for p in self._predict(X)]
