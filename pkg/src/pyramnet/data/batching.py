from __future__ import annotations

import numpy as np

from ..errors import DataError
from .cloud import augment as augment_cloud


def cloud_seed(seed, index, epoch):
    """Per-cloud seed derived from (global seed, cloud index, epoch)."""
    return np.random.SeedSequence([seed, index, epoch]).generate_state(1)[0]


def batches(dataset, batch_size, shuffle=False, seed=0, epoch=0, augment=False, dtype=np.float32):
    """Yield ``(points B x N x F, labels)`` in (optionally shuffled) dataset order.

    Labels are shape (B,) for classification and (B, N) for segmentation. The
    last batch may be short.
    """
    clouds = dataset.clouds
    if not clouds:
        return
    shapes = {c.points.shape for c in clouds}
    if len(shapes) != 1:
        raise DataError(f"clouds differ in N x F: {sorted(shapes)}")
    order = np.arange(len(clouds))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(clouds))
    segmentation = dataset.task != "classification"
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        picked = [clouds[i] for i in idx]
        if augment:
            picked = [augment_cloud(c, seed=cloud_seed(seed, int(i), epoch)) for c, i in zip(picked, idx)]
        points = np.stack([c.points for c in picked]).astype(dtype)
        if segmentation:
            labels = np.stack([c.point_labels for c in picked])
        else:
            labels = np.array([c.cloud_label for c in picked], dtype=np.int64)
        yield points, labels
