"""Posterior concept probabilities for a new image.

The image's patches are embedded and hard-assigned to clusters; the
occupancy counts (s_1, ..., s_R) are the sufficient statistic.  For each
concept r and value v the likelihood is multinomial,

    P(occupancy | r, v) = s! / (s_1! ... s_R!) * prod_l p(l|r,v)^{s_l},

with conditionals floored at epsilon so the product never vanishes
identically; undefined rows count as epsilon throughout.  Posteriors are
computed in log space (occupancies in the hundreds would underflow a
direct product) and normalized over v, which cancels the multinomial
coefficient; the coefficient is kept in the per-concept normalizing
constants reported for diagnostics.
"""

import math
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel, assign_batch
from .counts import ProbabilityModel
from .dataset import ImageRecord, PatchConfig, patch_matrix
from .embedding import Embedder, embed_matrix
from .errors import NumericError, PredictionError

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class Prediction:
    """Per-concept posterior vectors plus diagnostics for one image."""

    posteriors: tuple[np.ndarray, ...]      # per concept: (n_r,)
    log_likelihoods: tuple[np.ndarray, ...]  # per concept: (n_r,)
    normalizers: tuple[float, ...]          # per concept: P{occupancy}

    def argmax(self) -> tuple[int, ...]:
        """Most probable value (1-based) for every concept."""
        return tuple(int(np.argmax(p)) + 1 for p in self.posteriors)


def occupancy(
    model: ClusterModel, embedder: Embedder, image: ImageRecord, patch_cfg: PatchConfig
) -> np.ndarray:
    """Cluster occupancy counts of one image: patches -> embed -> assign."""
    flat, _ = patch_matrix([image], patch_cfg)
    labels = assign_batch(model, embed_matrix(embedder, flat))
    return np.bincount(labels - 1, minlength=model.r).astype(np.int64)


def predict(
    prob_model: ProbabilityModel, occ: np.ndarray, epsilon: float = DEFAULT_EPSILON
) -> Prediction:
    """Posterior probability of every concept value given an occupancy vector."""
    occ = np.asarray(occ, dtype=np.int64)
    if occ.shape != (prob_model.r_clusters,):
        raise NumericError(
            f"occupancy has {occ.shape[0]} clusters, model has {prob_model.r_clusters}"
        )
    if occ.sum() < 1 or occ.min() < 0:
        raise NumericError("occupancy needs non-negative counts summing to at least 1")
    if epsilon <= 0.0:
        raise NumericError("epsilon must be positive")

    s = int(occ.sum())
    log_coef = math.lgamma(s + 1) - sum(math.lgamma(int(c) + 1) for c in occ)
    posteriors = []
    log_likelihoods = []
    normalizers = []
    for r, name in enumerate(prob_model.schema.names):
        prior = prob_model.priors[r]
        if prior.sum() <= 0.0:
            raise PredictionError(f"no training data for concept {name}")
        cond = np.maximum(prob_model.conditionals[r], epsilon)
        cond[~prob_model.defined[r]] = epsilon
        log_lik = np.log(cond) @ occ
        shifted = np.exp(log_lik - log_lik.max()) * prior
        total = float(shifted.sum())
        if total <= 0.0:
            raise PredictionError(f"posterior mass vanished for concept {name}")
        posteriors.append(shifted / total)
        log_likelihoods.append(log_lik)
        with np.errstate(divide="ignore"):
            log_terms = log_lik + np.log(prior)
        peak = float(np.max(log_terms))
        norm = math.exp(peak + log_coef) * float(np.exp(log_terms - peak).sum())
        normalizers.append(norm)
    return Prediction(tuple(posteriors), tuple(log_likelihoods), tuple(normalizers))


def decide(pred: Prediction, thresholds) -> tuple[tuple[int, ...], ...]:
    """Values meeting each concept's threshold; may be empty or plural.

    thresholds maps concept index -> gamma in [0, 1]; concepts without an
    entry get no assertion (empty set) unless gamma is given as 0.
    """
    assigned = []
    for r, post in enumerate(pred.posteriors):
        gamma = thresholds.get(r) if hasattr(thresholds, "get") else thresholds[r]
        if gamma is None:
            assigned.append(())
            continue
        if not 0.0 <= gamma <= 1.0:
            raise NumericError(f"threshold for concept {r} must lie in [0, 1]")
        assigned.append(tuple(int(v) + 1 for v in np.nonzero(post >= gamma)[0]))
    return tuple(assigned)
