"""Patch embeddings: a PCA projection fit on training patches.

The embedder is an affine map e = W (x - mean) with orthonormal rows W
found by power iteration with deflation on the patch covariance.  Rows
follow a fixed sign convention (first nonzero coordinate positive) so a
fitted embedder is reproducible bit for bit.  Externally produced
embeddings can be ingested from CSV instead.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Patch
from .errors import DataFormatError, NumericError

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000
_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class Embedder:
    mean: np.ndarray          # (patch_dim,)
    components: np.ndarray    # (d_e, patch_dim), orthonormal rows
    explained_variance: np.ndarray  # (d_e,), non-increasing

    def __post_init__(self):
        d_e, dim = self.components.shape
        if d_e > dim:
            raise NumericError("embedding size exceeds patch dimension")
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(d_e), atol=_ORTHO_TOL):
            raise NumericError("embedder components are not orthonormal")

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.components.shape[1]


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.nonzero(np.abs(v) > 1e-12)[0]
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _power_iteration(cov: np.ndarray, rng) -> tuple[np.ndarray, float]:
    """Dominant eigenpair of a symmetric PSD matrix."""
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(_POWER_MAX_ITER):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm < _POWER_TOL:
            return _fix_sign(v), 0.0
        w /= norm
        if np.linalg.norm(w - v) < _POWER_TOL or np.linalg.norm(w + v) < _POWER_TOL:
            v = w
            break
        v = w
    v = _fix_sign(v)
    return v, float(v @ cov @ v)


def _canonical_completion(components: list[np.ndarray], dim: int, needed: int):
    """Pad with canonical basis vectors orthogonalized against the span."""
    added = []
    for i in range(dim):
        if len(added) == needed:
            break
        e = np.zeros(dim)
        e[i] = 1.0
        for c in components + added:
            e -= (e @ c) * c
        norm = np.linalg.norm(e)
        if norm > 1e-6:
            added.append(_fix_sign(e / norm))
    return added


def fit_pca(patches, d_e: int, seed: int = 0) -> Embedder:
    """Top d_e principal directions of the flattened patches.

    Needs at least d_e + 1 patches.  Directions with (numerically) zero
    variance are replaced by canonical basis vectors orthogonal to the
    components already found, keeping the row count at d_e.
    """
    data = _as_matrix(patches)
    n, dim = data.shape
    if d_e < 1:
        raise NumericError("embedding size must be at least 1")
    if d_e > dim:
        raise NumericError(f"embedding size {d_e} exceeds patch dimension {dim}")
    if n < d_e + 1:
        raise NumericError(f"need at least {d_e + 1} patches to fit {d_e} components")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = (centered.T @ centered) / n
    rng = np.random.default_rng(seed)
    components: list[np.ndarray] = []
    variances: list[float] = []
    for _ in range(d_e):
        v, lam = _power_iteration(cov, rng)
        if lam <= _POWER_TOL:
            break
        # deflate and re-orthogonalize against earlier directions
        for c in components:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        v = _fix_sign(v)
        components.append(v)
        variances.append(lam)
        cov = cov - lam * np.outer(v, v)
    if len(components) < d_e:
        pad = _canonical_completion(components, dim, d_e - len(components))
        components.extend(pad)
        variances.extend([0.0] * len(pad))
    return Embedder(mean, np.array(components), np.array(variances))


def _as_matrix(patches) -> np.ndarray:
    rows = []
    for p in patches:
        rows.append(p.pixels.reshape(-1) if isinstance(p, Patch) else np.asarray(p).reshape(-1))
    return np.asarray(rows, dtype=np.float64)


def embed(embedder: Embedder, patch) -> np.ndarray:
    """Project one patch: components @ (flattened pixels - mean)."""
    x = patch.pixels.reshape(-1) if isinstance(patch, Patch) else np.asarray(patch).reshape(-1)
    if x.shape[0] != embedder.patch_dim:
        raise NumericError(
            f"patch has {x.shape[0]} pixels, embedder expects {embedder.patch_dim}"
        )
    return embedder.components @ (x - embedder.mean)


def embed_matrix(embedder: Embedder, flat_patches: np.ndarray) -> np.ndarray:
    """Vectorized projection of pre-flattened patches, one per row."""
    if flat_patches.shape[1] != embedder.patch_dim:
        raise NumericError("patch matrix width does not match the embedder")
    return (flat_patches - embedder.mean) @ embedder.components.T


def reconstruction_error(embedder: Embedder, patches) -> float:
    """Total squared error of projecting onto the component span."""
    data = _as_matrix(patches)
    centered = data - embedder.mean
    coded = centered @ embedder.components.T
    return float(np.sum((centered - coded @ embedder.components) ** 2))


# --------------------------------------------------------------------------
# External embedding CSV
# --------------------------------------------------------------------------


def save_external_embeddings(path, table: dict[tuple[int, int], np.ndarray]) -> None:
    keys = sorted(table)
    dim = len(table[keys[0]])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "patch_id"] + [f"e{i}" for i in range(dim)])
        for img, patch in keys:
            writer.writerow(
                [img, patch] + [format(float(x), ".17g") for x in table[(img, patch)]]
            )


def load_external_embeddings(path) -> dict[tuple[int, int], np.ndarray]:
    """Read an (image_id, patch_id) -> embedding table; one shared dimension."""
    table: dict[tuple[int, int], np.ndarray] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["image_id", "patch_id"]:
            raise DataFormatError("embedding CSV must start with image_id,patch_id columns")
        dim = len(header) - 2
        if dim < 1:
            raise DataFormatError("embedding CSV has no embedding columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise DataFormatError(f"ragged embedding row at line {lineno}")
            try:
                key = (int(row[0]), int(row[1]))
                vec = np.array([float(x) for x in row[2:]], dtype=np.float64)
            except ValueError:
                raise DataFormatError(f"non-numeric cell at line {lineno}") from None
            if key in table:
                raise DataFormatError(f"duplicate embedding key {key}")
            table[key] = vec
    return table
