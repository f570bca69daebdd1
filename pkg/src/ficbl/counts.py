"""Frequency counts over (cluster, concept value, combination) and the
probability tables derived from them.

Training reduces to tallies:

    s_l        embeddings in cluster l           -> p(l)      = s_l / S
    s_v^r(l)   ... from images with c_r = v      -> p(l|r,v)  = s_v^r(l) / s_v^r
    s_v^r      row sums of the above             -> p(r,v)    = s_v^r / S_r
    n(l, z)    embeddings in cluster l from fully labeled images with
               combination z; N_z image counts give the joint P{C=z}

Images missing a value for concept r still feed s_l and S but are left out
of that concept's tables; (r, v) rows with no data are explicitly marked
undefined rather than silently zero.

An expert rule g reweights the tables.  With pi(z) the probability that g
holds at z, the prior for concept r becomes

    p'(r,v) ~ a(r,v) p(r,v),   a(r,v) = sum_{z: z_r=v} pi(z) P{C=z}

normalized over v, and the conditional for (r, v) becomes

    p'(l|r,v) ~ b(l) p(l|r,v), b(l) = sum_{z: z_r=v, n(l,z)>0} pi(z) P{C=z}

normalized over l.  Only combinations observed in the training data carry
mass; membership of z in cluster l requires at least one embedding.
"""

from dataclasses import dataclass, replace

import numpy as np

from .concepts import MISSING, Combination, ConceptSchema
from .errors import FicblError, NumericError, RuleInconsistentError
from .rules import Rule, format_rule, truth_prob


@dataclass(frozen=True)
class CountTables:
    schema: ConceptSchema
    r_clusters: int
    n_images: int
    n_fully_labeled: int
    s_l: np.ndarray                     # (R,) embeddings per cluster
    svr_l: tuple[np.ndarray, ...]       # per concept: (n_r, R) tallies
    n_lz: dict[Combination, np.ndarray]  # per combination: (R,) tallies
    n_z: dict[Combination, int]         # per combination: image count

    @property
    def s_total(self) -> int:
        return int(self.s_l.sum())

    @property
    def svr(self) -> tuple[np.ndarray, ...]:
        return tuple(t.sum(axis=1) for t in self.svr_l)

    @property
    def s_r_total(self) -> tuple[int, ...]:
        return tuple(int(t.sum()) for t in self.svr_l)


def fit_counts(assignments, labels, r_clusters: int, schema: ConceptSchema) -> CountTables:
    """Tally all tables from per-image cluster assignments and labels.

    assignments[i] lists the 1-based cluster index of every patch of image
    i; labels[i] is that image's concept vector (0 marks a missing value).
    """
    assignments = [np.asarray(a, dtype=np.int64) for a in assignments]
    labels = [schema.validate_vector(lab) for lab in labels]
    if len(assignments) != len(labels):
        raise FicblError("one assignment list per labeled image is required")
    if not assignments:
        raise FicblError("cannot fit counts on an empty dataset")
    for a in assignments:
        if a.size == 0:
            raise FicblError("every image must contribute at least one patch")
        if a.min() < 1 or a.max() > r_clusters:
            raise NumericError(f"cluster index outside 1..{r_clusters}")

    s_l = np.zeros(r_clusters, dtype=np.int64)
    svr_l = tuple(
        np.zeros((n, r_clusters), dtype=np.int64) for n in schema.cardinalities
    )
    n_lz: dict[Combination, np.ndarray] = {}
    n_z: dict[Combination, int] = {}
    n_fully_labeled = 0
    for a, lab in zip(assignments, labels):
        per_cluster = np.bincount(a - 1, minlength=r_clusters).astype(np.int64)
        s_l += per_cluster
        for r, v in enumerate(lab):
            if v != MISSING:
                svr_l[r][v - 1] += per_cluster
        if MISSING not in lab:
            n_fully_labeled += 1
            n_z[lab] = n_z.get(lab, 0) + 1
            if lab not in n_lz:
                n_lz[lab] = np.zeros(r_clusters, dtype=np.int64)
            n_lz[lab] += per_cluster
    return CountTables(
        schema=schema,
        r_clusters=r_clusters,
        n_images=len(labels),
        n_fully_labeled=n_fully_labeled,
        s_l=s_l,
        svr_l=svr_l,
        n_lz={z: n_lz[z] for z in sorted(n_lz)},
        n_z={z: n_z[z] for z in sorted(n_z)},
    )


@dataclass(frozen=True)
class ProbabilityModel:
    """All probabilities inference needs; possibly reweighted by a rule.

    conditionals[r][v-1] is the length-R row p(.|r,v); defined[r][v-1] is
    False when the training data contained no value-v image for concept r
    (or a rule removed all of its mass), in which case the row is
    meaningless and inference substitutes epsilon.
    """

    schema: ConceptSchema
    r_clusters: int
    priors: tuple[np.ndarray, ...]           # per concept: (n_r,)
    conditionals: tuple[np.ndarray, ...]     # per concept: (n_r, R)
    defined: tuple[np.ndarray, ...]          # per concept: (n_r,) bool
    p_l: np.ndarray                          # (R,)
    joint: dict[Combination, float]          # P{C=z} over observed support
    rule_applied: str | None = None

    def in_cluster_posteriors(self, counts: CountTables) -> tuple[np.ndarray, ...]:
        """p(r,v|l) = s_v^r(l) / s_l for every concept: tuples of (n_r, R)."""
        out = []
        with np.errstate(invalid="ignore"):
            for table in counts.svr_l:
                out.append(np.where(counts.s_l > 0, table / counts.s_l, 0.0))
        return tuple(out)


def probability_model(counts: CountTables) -> ProbabilityModel:
    """Derive priors, conditionals, and the empirical joint from counts."""
    priors = []
    conditionals = []
    defined = []
    for r, table in enumerate(counts.svr_l):
        row_sums = table.sum(axis=1)
        total = row_sums.sum()
        has_data = row_sums > 0
        priors.append(row_sums / total if total > 0 else np.zeros(len(row_sums)))
        cond = np.zeros(table.shape, dtype=np.float64)
        cond[has_data] = table[has_data] / row_sums[has_data, None]
        conditionals.append(cond)
        defined.append(has_data)
    s = counts.s_total
    joint = {
        z: n / counts.n_fully_labeled for z, n in counts.n_z.items()
    } if counts.n_fully_labeled else {}
    return ProbabilityModel(
        schema=counts.schema,
        r_clusters=counts.r_clusters,
        priors=tuple(priors),
        conditionals=tuple(conditionals),
        defined=tuple(defined),
        p_l=counts.s_l / s if s else np.zeros(counts.r_clusters),
        joint=joint,
    )


def _truth_weights(model: ProbabilityModel, rule: Rule) -> dict[Combination, float]:
    if not model.joint:
        raise RuleInconsistentError(
            "rule updates need at least one fully labeled training image"
        )
    return {z: truth_prob(rule, z) * p for z, p in model.joint.items()}


def rule_update_priors(
    model: ProbabilityModel, counts: CountTables, rule: Rule, schema: ConceptSchema
) -> ProbabilityModel:
    """Reweight every concept's prior by the rule's updating coefficients."""
    if rule.is_constant_true:
        return model
    weights = _truth_weights(model, rule)
    new_priors = []
    for r in range(len(schema)):
        prior = model.priors[r]
        if prior.sum() == 0.0:  # concept never labeled; nothing to update
            new_priors.append(prior)
            continue
        a = np.zeros(len(prior))
        for z, w in weights.items():
            a[z[r] - 1] += w
        norm = float(a @ prior)
        if norm <= 0.0:
            raise RuleInconsistentError(
                f"rule is inconsistent with the data for concept {schema.names[r]}"
            )
        new_priors.append(a * prior / norm)
    return replace(model, priors=tuple(new_priors))


def rule_update_conditionals(
    model: ProbabilityModel, counts: CountTables, rule: Rule, schema: ConceptSchema
) -> ProbabilityModel:
    """Reweight the per-cluster conditionals of every (concept, value).

    A combination contributes its full mass to cluster l's coefficient as
    soon as any embedding of such an image landed there.  Values whose
    entire mass the rule removes become undefined rows (their updated
    prior is zero); values with no surviving mass in any cluster would be
    a genuine inconsistency and raise.
    """
    if rule.is_constant_true:
        return model
    weights = _truth_weights(model, rule)
    new_conditionals = []
    new_defined = []
    for r in range(len(schema)):
        cond = model.conditionals[r].copy()
        defined = model.defined[r].copy()
        for v in range(1, schema.cardinalities[r] + 1):
            if not defined[v - 1]:
                continue
            b = np.zeros(model.r_clusters)
            a_rv = 0.0
            for z, w in weights.items():
                if z[r] != v:
                    continue
                a_rv += w
                b += w * (counts.n_lz[z] > 0)
            norm = float(b @ cond[v - 1])
            if norm <= 0.0:
                if a_rv > 0.0:
                    raise RuleInconsistentError(
                        f"rule left no cluster mass for concept {schema.names[r]} value {v}"
                    )
                # the rule excluded this value entirely; the row carries no data now
                cond[v - 1] = 0.0
                defined[v - 1] = False
                continue
            cond[v - 1] = b * cond[v - 1] / norm
        new_conditionals.append(cond)
        new_defined.append(defined)
    return replace(
        model, conditionals=tuple(new_conditionals), defined=tuple(new_defined)
    )


def apply_rule(
    model: ProbabilityModel, counts: CountTables, rule: Rule, schema: ConceptSchema
) -> ProbabilityModel:
    """Apply one rule to both priors and conditionals."""
    updated = rule_update_priors(model, counts, rule, schema)
    updated = rule_update_conditionals(updated, counts, rule, schema)
    if rule.is_constant_true:
        return updated
    return replace(updated, rule_applied=format_rule(rule, schema))
