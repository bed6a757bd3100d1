"""Input checking for the estimator layer.

Images arrive either as a flat design matrix (n, side*side*channels),
the shape scikit-learn pipelines pass around, or as an explicit batch
(n, side, side, channels). These helpers normalize to the batch form
and remember which layout arrived so transforms can answer in kind.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


def as_image_batch(X, image_side: int, channels: int):
    """(float32 batch (n, side, side, channels), arrived_flat)."""
    arr = check_array(X, dtype=np.float32, ensure_2d=False, allow_nd=True)
    flat = image_side * image_side * channels
    if arr.ndim == 2:
        if arr.shape[1] != flat:
            raise ValueError(
                f"flat images need {flat} columns for side={image_side}"
                f" channels={channels}, got {arr.shape[1]}")
        return arr.reshape(-1, image_side, image_side, channels), True
    if arr.ndim == 4:
        if arr.shape[1:] != (image_side, image_side, channels):
            raise ValueError(
                f"expected batch shape (n, {image_side}, {image_side},"
                f" {channels}), got {tuple(arr.shape)}")
        return arr, False
    raise ValueError(
        f"images must be flat 2D rows or a 4D batch, got ndim={arr.ndim}")


def check_images_and_labels(X, y, image_side: int, channels: int):
    """Validated (batch, labels, arrived_flat) with matching lengths."""
    imgs, was_flat = as_image_batch(X, image_side, channels)
    y = column_or_1d(y, warn=False)
    if len(y) != len(imgs):
        raise ValueError(f"X has {len(imgs)} images but y has {len(y)} labels")
    return imgs, y, was_flat
