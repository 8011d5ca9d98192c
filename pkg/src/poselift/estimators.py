"""Scikit-learn style wrappers so the pipeline composes with the wider
ecosystem: occlusion injection and guidance as transformers, the lifting
network as a fit/predict estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import occlusion as occ
from .core import PoseDataset
from .metrics import mpjpe_p1
from .model import ModelConfig, build_model
from .occlusion import GuidanceConfig
from .training import TrainConfig, train


def check_pose_array(X, name="X") -> np.ndarray:
    """Validate a (t, j, 3) or (n, t, j, 3) pose array: float, finite."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim not in (3, 4) or arr.shape[-1] != 3:
        raise ValueError(
            f"{name} must have shape (t, j, 3) or (n, t, j, 3), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _per_sequence(X, fn):
    arr = check_pose_array(X)
    if arr.ndim == 3:
        return fn(arr)
    return np.stack([fn(a) for a in arr])


class OcclusionInjector(TransformerMixin, BaseEstimator):
    """Zero a fresh uniform draw of ``n_missing`` joints in every frame."""

    def __init__(self, n_missing=4, seed=0):
        self.n_missing = n_missing
        self.seed = seed

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed]))

        def inject(a):
            out, _ = occ.inject_array(a, self.n_missing, rng)
            return out

        return _per_sequence(X, inject)


class OcclusionGuide(TransformerMixin, BaseEstimator):
    """Fill missing joints (exact zero triples) from their temporally nearest
    observation with gap-scaled confidence."""

    def __init__(self, f_past=3, f_future=3, fallback="whole_sequence_search"):
        self.f_past = f_past
        self.f_future = f_future
        self.fallback = fallback

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = GuidanceConfig(f_past=self.f_past, f_future=self.f_future,
                             fallback=self.fallback)

        def guide(a):
            present = ~np.all(a == 0.0, axis=-1)
            return occ.guide_array(a, present, cfg)

        return _per_sequence(X, guide)


class DtfLifter(BaseEstimator):
    """2D-to-3D pose lifter around the dual-view fusion network.

    fit() trains on paired arrays X (n, t, j, 3) of 2D detections and
    y (n, t, j, 3) of root-relative 3D poses; predict() returns the central
    3D pose of each input window.
    """

    def __init__(self, variant="DTF", embed_dim=32, n_heads=4, mvg_layers=2,
                 srm_layers=1, ifm_layers=1, mlp_ratio=2.0, steps=300,
                 batch_size=8, learning_rate=1e-3, lr_decay=0.98,
                 occlusion_mode="OGV", n_missing=0, f_past=3, f_future=3,
                 seed=0):
        self.variant = variant
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.mvg_layers = mvg_layers
        self.srm_layers = srm_layers
        self.ifm_layers = ifm_layers
        self.mlp_ratio = mlp_ratio
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.occlusion_mode = occlusion_mode
        self.n_missing = n_missing
        self.f_past = f_past
        self.f_future = f_future
        self.seed = seed

    def fit(self, X, y):
        X = check_pose_array(X, "X")
        y = check_pose_array(y, "y")
        if X.ndim != 4 or y.shape != X.shape:
            raise ValueError("fit needs matching (n, t, j, 3) arrays for X and y")
        _, t, j, _ = X.shape
        model_cfg = ModelConfig(variant=self.variant, t=t, j=j,
                                mvg_layers=self.mvg_layers,
                                srm_layers=self.srm_layers,
                                ifm_layers=self.ifm_layers,
                                embed_dim=self.embed_dim, n_heads=self.n_heads,
                                mlp_ratio=self.mlp_ratio)
        train_cfg = TrainConfig(steps=self.steps, batch_size=self.batch_size,
                                learning_rate=self.learning_rate,
                                lr_decay=self.lr_decay, seed=self.seed,
                                occlusion_mode=self.occlusion_mode,
                                n_missing_per_frame=self.n_missing,
                                guidance=GuidanceConfig(self.f_past, self.f_future))
        dataset = PoseDataset(x2d=X, y3d=y, actions=["fit"] * len(X))
        model = build_model(model_cfg, self.seed)
        self.model_, _, self.history_ = train(model, dataset, train_cfg)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() before predict()")
        X = check_pose_array(X, "X")
        if X.ndim == 3:
            return self.model_.predict_batch(X[np.newaxis])[0]
        return self.model_.predict_batch(X)

    def score(self, X, y):
        """Negative central-frame position error (higher is better)."""
        X = check_pose_array(X, "X")
        y = check_pose_array(y, "y")
        preds = self.predict(X)
        half = X.shape[-3] // 2
        centers = y[:, half] if y.ndim == 4 else y[half]
        return -mpjpe_p1(preds, centers)
