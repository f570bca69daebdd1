import numpy as np
import pytest

from ficbl.concepts import schema_from_cardinalities
from ficbl.counts import fit_counts, probability_model

# Canonical worked example: 10 lung-nodule images, 4 patches each, 3 clusters.
# Diagnosis (malignant=1, benign=2), Contour (smooth=1, grainy=2, spicules=3),
# Inclusion (homogeneous=1, necrosis=2).
NODULES_SCHEMA = schema_from_cardinalities((2, 3, 2), ("diagnosis", "contour", "inclusion"))

NODULES_LABELS = [
    (2, 1, 1), (2, 1, 1),              # benign, smooth, homogeneous
    (2, 2, 1), (2, 2, 1),              # benign, grainy, homogeneous
    (1, 3, 1), (1, 3, 1), (1, 3, 1), (1, 3, 1),  # malignant, spicules, homogeneous
    (1, 2, 2), (1, 2, 2),              # malignant, grainy, necrosis
]

# Per-image cluster assignments consistent with the hand-computed tallies:
# cluster sizes (28, 7, 5) and per-group totals (6,0,2), (6,0,2), (10,5,1), (6,2,0).
NODULES_ASSIGNMENTS = [
    [1, 1, 1, 3], [1, 1, 1, 3],
    [1, 1, 1, 3], [1, 1, 1, 3],
    [1, 1, 1, 2], [1, 1, 1, 2], [1, 1, 2, 3], [1, 1, 2, 2],
    [1, 1, 1, 2], [1, 1, 1, 2],
]


@pytest.fixture(scope="session")
def nodules_counts():
    return fit_counts(NODULES_ASSIGNMENTS, NODULES_LABELS, 3, NODULES_SCHEMA)


@pytest.fixture(scope="session")
def nodules_prob(nodules_counts):
    return probability_model(nodules_counts)


def _upscale(img8: np.ndarray, size: int = 28) -> np.ndarray:
    idx = (np.arange(size) * img8.shape[0]) // size
    return img8[np.ix_(idx, idx)]


@pytest.fixture(scope="session")
def digit_pools():
    """Disjoint train/test pools of 28x28 digit images from the bundled set."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    train: dict[int, list[np.ndarray]] = {d: [] for d in range(10)}
    test: dict[int, list[np.ndarray]] = {d: [] for d in range(10)}
    per_class: dict[int, int] = {d: 0 for d in range(10)}
    for img, digit in zip(raw.images, raw.target):
        scaled = _upscale(img / 16.0)
        digit = int(digit)
        # every third image is held out for test-set composition
        if per_class[digit] % 3 == 2:
            test[digit].append(scaled)
        else:
            train[digit].append(scaled)
        per_class[digit] += 1
    return train, test
