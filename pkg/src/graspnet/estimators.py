"""scikit-learn style wrappers around the training and inference functions.

``GraspNetClassifier`` learns from demonstrations (``fit``), scores patches
(``predict_proba``/``predict``/``score``) and turns full frames into
activation maps (``transform``). ``ReptileInitializer`` meta-learns an
initialisation that a classifier can start from via ``init_params``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentationConfig
from .demo import as_demo_dict
from .errors import InvalidShapeError
from .model import PATCH_SIZE, forward_full_batch, predict_patches
from .training import ReptileConfig, TrainConfig, reptile_meta_train, train


def check_patches(X) -> np.ndarray:
    """Validate an (N, 128, 128, 3) stack of patches with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
        raise InvalidShapeError(f"expected (N, 128, 128, 3) patches, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("patches contain NaN or Inf")
    if X.min(initial=0) < 0 or X.max(initial=0) > 1:
        raise ValueError("patch values must lie in [0, 1]")
    return X


def check_images(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise InvalidShapeError(f"expected (N, H, W, 3) images, got {X.shape}")
    if X.shape[1] < PATCH_SIZE or X.shape[2] < PATCH_SIZE:
        raise InvalidShapeError(f"images must be at least {PATCH_SIZE}px on each side")
    return X


class GraspNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Grasp-success classifier trained from demonstration frames.

    ``fit(demos, target_id)`` takes a mapping or iterable of
    :class:`~graspnet.demo.Demonstration` objects and the id of the block to
    grasp. Passing ``init_params`` switches to fine-tuning from those weights.
    """

    def __init__(self, scheme="single", iterations=512, batch_size=64, learning_rate=0.001,
                 beta1=0.9, beta2=0.999, pos_fraction=0.5, eval_every=16, n_val=200,
                 augmentation=None, init_params=None, random_state=0):
        self.scheme = scheme
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.pos_fraction = pos_fraction
        self.eval_every = eval_every
        self.n_val = n_val
        self.augmentation = augmentation
        self.init_params = init_params
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                           lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                           scheme=self.scheme, seed=self.random_state,
                           pos_fraction=self.pos_fraction, eval_every=self.eval_every,
                           n_val=self.n_val,
                           augmentation=self.augmentation or AugmentationConfig())

    def fit(self, X, y=None):
        """Train on demonstrations ``X`` for target block ``y`` (an int)."""
        if y is None:
            raise ValueError("fit needs the target block id as y")
        demos = as_demo_dict(X)
        self.target_id_ = int(y)
        self.params_, self.metrics_ = train(demos, self.target_id_, self._train_config(),
                                            init=self.init_params)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        p = predict_patches(self.params_, check_patches(X)).astype(np.float64)
        return np.column_stack([1 - p, p])

    def predict(self, X) -> np.ndarray:
        # p >= 0.5 counts as positive
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def transform(self, X) -> np.ndarray:
        """Activation-map grids, shape (N, rows, cols), for full frames."""
        check_is_fitted(self, "params_")
        maps = forward_full_batch(self.params_, check_images(X))
        return np.stack([m.grid for m in maps])


class ReptileInitializer(BaseEstimator):
    """Meta-learns GraspNet initial weights from all demonstrations but one."""

    def __init__(self, outer_iterations=250, outer_step=0.6, meta_batch=4, inner_iterations=10,
                 inner_batch=10, inner_learning_rate=0.001, inner_beta1=0.0, random_state=0):
        self.outer_iterations = outer_iterations
        self.outer_step = outer_step
        self.meta_batch = meta_batch
        self.inner_iterations = inner_iterations
        self.inner_batch = inner_batch
        self.inner_learning_rate = inner_learning_rate
        self.inner_beta1 = inner_beta1
        self.random_state = random_state

    def _config(self) -> ReptileConfig:
        return ReptileConfig(outer_iterations=self.outer_iterations, outer_step=self.outer_step,
                             meta_batch=self.meta_batch, inner_iterations=self.inner_iterations,
                             inner_batch=self.inner_batch, inner_lr=self.inner_learning_rate,
                             inner_beta1=self.inner_beta1, seed=self.random_state)

    def fit(self, X, y=None):
        """``y`` is the held-out block id, excluded from meta-training."""
        if y is None:
            raise ValueError("fit needs the held-out block id as y")
        self.held_out_id_ = int(y)
        self.params_ = reptile_meta_train(as_demo_dict(X), self.held_out_id_, self._config())
        return self

    def fine_tune(self, X, target_id=None, iterations=200):
        """Fine-tuned :class:`GraspNetClassifier` for ``target_id`` (default: the held-out block)."""
        check_is_fitted(self, "params_")
        target = self.held_out_id_ if target_id is None else int(target_id)
        clf = GraspNetClassifier(scheme="multi", iterations=iterations,
                                 init_params=self.params_, random_state=self.random_state)
        return clf.fit(X, target)
