"""The fixed synthetic outlier suite used for the error-ordering studies.

Activations: 256 x 1024, standard-normal base, 0.5% of channels scaled x10,
8 cells scaled x100, seeds 1..5. Weights: 1024 x 256 standard-normal drawn
with seed ``WEIGHT_SEED_OFFSET + seed``.
"""

from __future__ import annotations

import numpy as np

from .tensor import OutlierSpec, generate_tensor

SUITE_SEEDS = (1, 2, 3, 4, 5)
ACT_SHAPE = (256, 1024)
WEIGHT_SHAPE = (1024, 256)
WEIGHT_SEED_OFFSET = 1000


def activation_spec(seed: int) -> OutlierSpec:
    return OutlierSpec(
        normal_fraction=0.005,
        normal_magnitude=10.0,
        massive_count=8,
        massive_magnitude=100.0,
        base_distribution="standard-normal",
        seed=seed,
    )


def weight_spec(seed: int) -> OutlierSpec:
    return OutlierSpec(seed=WEIGHT_SEED_OFFSET + seed)


def suite_case(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``(X, W)`` for one suite seed."""
    X = generate_tensor(*ACT_SHAPE, activation_spec(seed))
    W = generate_tensor(*WEIGHT_SHAPE, weight_spec(seed))
    return X, W
