"""scikit-learn style wrapper around training and inference.

``X`` is a pair ``(images, token_ids)`` with images ``[n, 3, H, W]`` in ``[0, 1]``
and integer prompts ``[n, N]``. ``y`` holds foreground masks ``[n, H, W]`` (0/1)
or one-hot masks ``[n, 2, H, W]``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .data.dataset import Dataset
from .data.synth import DatasetManifest
from .data.vocab import VOCAB
from .errors import DataError, DimensionError
from .model import model_forward
from .trainer import predict, prompts_for, score_masks, train


def check_images_and_prompts(X) -> tuple[np.ndarray, np.ndarray]:
    """Split ``X`` into float images and integer token ids, checking shapes and ranges."""
    try:
        images, ids = X
    except (TypeError, ValueError):
        raise DataError("X must be a pair (images, token_ids)") from None
    images = np.asarray(images, dtype=np.float64)
    ids = np.asarray(ids)
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != images.shape[3]:
        raise DimensionError(f"images must be [n, 3, H, H], got {images.shape}")
    if not np.all(np.isfinite(images)):
        raise DataError("images contain non-finite values")
    if ids.ndim != 2 or len(ids) != len(images):
        raise DimensionError(f"token_ids must be [n, N] with n={len(images)}, got {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"token_ids must be integers, got dtype {ids.dtype}")
    if len(images) == 0:
        raise DataError("X holds no samples")
    return images, ids.astype(np.int64)


def check_masks(y, n: int, h: int) -> np.ndarray:
    """One-hot ``[n, 2, h, h]`` masks from binary or one-hot input."""
    y = np.asarray(y)
    if y.shape == (n, h, h):
        if not np.all((y == 0) | (y == 1)):
            raise DataError("binary masks must hold only 0 and 1")
        fg = y.astype(np.float64)
        return np.stack([1.0 - fg, fg], axis=1)
    if y.shape == (n, 2, h, h):
        y = y.astype(np.float64)
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise DataError("one-hot masks must be 0/1 and sum to 1 over the class axis")
        return y
    raise DimensionError(f"masks must be [{n}, {h}, {h}] or [{n}, 2, {h}, {h}], got {y.shape}")


class ReferringSegmenter(BaseEstimator):
    """Text-prompted binary segmenter trained with early stopping on a held-out split.

    Without ``validation_data`` in :meth:`fit`, a ``validation_fraction`` of the
    training samples (chosen with ``random_state``) drives early stopping.
    """

    def __init__(self, loss="seu", lr0=3e-4, lr_min=1e-6, t_max=200, max_epochs=200, min_epochs=20,
                 patience=20, batch_size=8, weight_decay=0.01, lambda_f=0.3, lambda_e=0.1, text_mode="on",
                 arch="full", modab=True, modab_all_stages=False, crb_norm="layer",
                 validation_fraction=0.2, random_state=0):
        self.loss = loss
        self.lr0 = lr0
        self.lr_min = lr_min
        self.t_max = t_max
        self.max_epochs = max_epochs
        self.min_epochs = min_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.lambda_f = lambda_f
        self.lambda_e = lambda_e
        self.text_mode = text_mode
        self.arch = arch
        self.modab = modab
        self.modab_all_stages = modab_all_stages
        self.crb_norm = crb_norm
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _run_config(self, image_size: int, max_tokens: int) -> RunConfig:
        p = self.get_params()
        frac, seed = p.pop("validation_fraction"), p.pop("random_state")
        if not 0.0 < frac < 1.0:
            raise DataError(f"validation_fraction must lie in (0, 1), got {frac}")
        return RunConfig().with_overrides(image_size=image_size, max_tokens=max_tokens, seed=seed,
                                          init_seed=seed, **p)

    def fit(self, X, y, validation_data=None) -> "ReferringSegmenter":
        images, ids = check_images_and_prompts(X)
        n, h = len(images), images.shape[-1]
        masks = check_masks(y, n, h)
        cfg = self._run_config(h, ids.shape[1])
        if validation_data is not None:
            v_images, v_ids = check_images_and_prompts(validation_data[0])
            if v_images.shape[1:] != images.shape[1:] or v_ids.shape[1] != ids.shape[1]:
                raise DimensionError("validation data must match the training image and prompt shapes")
            v_masks = check_masks(validation_data[1], len(v_images), h)
            tr_images, tr_ids, tr_masks = images, ids, masks
        else:
            n_val = max(1, int(round(self.validation_fraction * n)))
            if n_val >= n:
                raise DataError(f"{n} samples are too few to hold out a validation split")
            order = np.random.default_rng(self.random_state).permutation(n)
            tr, va = order[n_val:], order[:n_val]
            tr_images, tr_ids, tr_masks = images[tr], ids[tr], masks[tr]
            v_images, v_ids, v_masks = images[va], ids[va], masks[va]
        n_tr, n_va = len(tr_images), len(v_images)
        manifest = DatasetManifest(self.random_state, n_tr + n_va, h, n_tr, n_va, 0, ids.shape[1])
        data = Dataset(manifest, np.concatenate([tr_images, v_images]), np.concatenate([tr_ids, v_ids]),
                       np.concatenate([tr_masks, v_masks]), [""] * (n_tr + n_va))
        self.report_, self.params_ = train(cfg, data)
        self.config_ = cfg
        self.n_epochs_ = len(self.report_.epochs)
        return self

    def _inputs(self, X) -> tuple[np.ndarray, np.ndarray]:
        check_is_fitted(self, "params_")
        images, ids = check_images_and_prompts(X)
        mc = self.config_.model
        if images.shape[-1] != mc.image_size or ids.shape[1] != mc.max_tokens:
            raise DimensionError(f"model expects {mc.image_size}x{mc.image_size} images and "
                                 f"{mc.max_tokens} tokens, got {images.shape[-1]} and {ids.shape[1]}")
        if ids.min() < 0 or ids.max() >= VOCAB.size:
            raise DataError(f"token ids must lie in [0, {VOCAB.size})")
        return images, prompts_for(ids, self.config_.train.text_mode, inference=True)

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel class probabilities ``[n, 2, H, W]``."""
        images, ids = self._inputs(X)
        out = [model_forward(images[i:i + 16], ids[i:i + 16], self.params_).value for i in range(0, len(images), 16)]
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        """Foreground masks ``[n, H, W]`` as ``uint8`` 0/1."""
        images, ids = self._inputs(X)
        return predict(self.params_, images, ids)

    def score(self, X, y) -> float:
        """Mean per-sample Dice of the predicted masks."""
        pred = self.predict(X)
        return score_masks(pred, check_masks(y, len(pred), pred.shape[-1])).mean_dice
