"""The trained artifact: pipeline assembly and the versioned model file.

A model file stores the schema, patch geometry, embedder, cluster model,
and the raw count tables (exact integers).  Probabilities are always
re-derived from counts on load, so expert rules can be applied, swapped,
or dropped after training without the original images.  Reals are written
as 17-significant-digit decimal text, which makes save -> load -> save
byte-identical.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import GMM, KMEANS, ClusterModel, assign_batch, fit_em_gmm, fit_kmeans
from .concepts import ConceptSchema
from .counts import CountTables, ProbabilityModel, apply_rule, fit_counts, probability_model
from .dataset import Dataset, ImageRecord, PatchConfig, patch_matrix
from .embedding import Embedder, embed_matrix, fit_pca
from .errors import DataFormatError, NumericError
from .inference import DEFAULT_EPSILON, Prediction, decide, predict
from .rules import Rule, combine_rules

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    patch_w: int = 28
    patch_h: int = 28
    stride_x: int = 28
    stride_y: int = 28
    embed_dim: int = 16
    clusters: int = 80
    algorithm: str = GMM
    seed: int = 0

    @property
    def patch(self) -> PatchConfig:
        return PatchConfig(self.patch_w, self.patch_h, self.stride_x, self.stride_y)

    def payload(self) -> dict:
        return {
            "patch": [self.patch_w, self.patch_h],
            "stride": [self.stride_x, self.stride_y],
            "embed_dim": self.embed_dim,
            "clusters": self.clusters,
            "algorithm": self.algorithm,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TrainedModel:
    schema: ConceptSchema
    patch_cfg: PatchConfig
    embedder: Embedder
    cluster_model: ClusterModel
    counts: CountTables
    rules: tuple[str, ...] = ()

    def probability_model(self) -> ProbabilityModel:
        return probability_model(self.counts)


def _split_assignments(labels_flat: np.ndarray, per_image: list[int]) -> list[np.ndarray]:
    out = []
    at = 0
    for count in per_image:
        out.append(labels_flat[at : at + count])
        at += count
    return out


def _fit_cluster(embeddings: np.ndarray, cfg: PipelineConfig) -> ClusterModel:
    if cfg.algorithm == KMEANS:
        return fit_kmeans(embeddings, cfg.clusters, cfg.seed)
    if cfg.algorithm == GMM:
        return fit_em_gmm(embeddings, cfg.clusters, cfg.seed)
    raise NumericError(f"unknown clustering algorithm {cfg.algorithm!r}")


def train_model(dataset: Dataset, cfg: PipelineConfig) -> TrainedModel:
    """Patch -> embed -> cluster -> count over a labeled dataset."""
    flat, per_image = patch_matrix(dataset.records, cfg.patch)
    if cfg.clusters > flat.shape[0]:
        raise NumericError(
            f"{cfg.clusters} clusters requested but only {flat.shape[0]} patches available"
        )
    embedder = fit_pca(flat, cfg.embed_dim, cfg.seed)
    embeddings = embed_matrix(embedder, flat)
    cluster = _fit_cluster(embeddings, cfg)
    assignments = _split_assignments(assign_batch(cluster, embeddings), per_image)
    counts = fit_counts(assignments, dataset.labels(), cfg.clusters, dataset.schema)
    return TrainedModel(dataset.schema, cfg.patch, embedder, cluster, counts)


def image_occupancies(model_parts, records, patch_cfg: PatchConfig) -> list[np.ndarray]:
    """Occupancy vectors for many images through a fitted embedder + clusters."""
    embedder, cluster = model_parts
    flat, per_image = patch_matrix(records, patch_cfg)
    labels = assign_batch(cluster, embed_matrix(embedder, flat))
    return [
        np.bincount(chunk - 1, minlength=cluster.r).astype(np.int64)
        for chunk in _split_assignments(labels, per_image)
    ]


def cluster_assignments(train: Dataset, test: Dataset, cfg: PipelineConfig):
    """Label-independent pipeline state: train assignments, test occupancies."""
    flat, per_image = patch_matrix(train.records, cfg.patch)
    if cfg.clusters > flat.shape[0]:
        raise NumericError(
            f"{cfg.clusters} clusters requested but only {flat.shape[0]} patches available"
        )
    embedder = fit_pca(flat, cfg.embed_dim, cfg.seed)
    embeddings = embed_matrix(embedder, flat)
    cluster = _fit_cluster(embeddings, cfg)
    assignments = _split_assignments(assign_batch(cluster, embeddings), per_image)
    occupancies = image_occupancies((embedder, cluster), test.records, cfg.patch)
    return assignments, occupancies


def predict_records(
    model: TrainedModel,
    records,
    rules: list[Rule] | None = None,
    epsilon: float = DEFAULT_EPSILON,
    thresholds=None,
) -> tuple[list[Prediction], list[tuple[tuple[int, ...], ...]]]:
    """Predictions (and threshold decisions, when requested) for images."""
    prob = model.probability_model()
    if rules:
        rule = combine_rules(rules)
        prob = apply_rule(prob, model.counts, rule, model.schema)
    occupancies = image_occupancies(
        (model.embedder, model.cluster_model), records, model.patch_cfg
    )
    predictions = [predict(prob, occ, epsilon) for occ in occupancies]
    decisions = []
    if thresholds is not None:
        decisions = [decide(p, thresholds) for p in predictions]
    return predictions, decisions


# --------------------------------------------------------------------------
# Model file
# --------------------------------------------------------------------------


def _reals(array: np.ndarray) -> list:
    if array.ndim == 1:
        return [format(float(x), ".17g") for x in array]
    return [_reals(row) for row in array]


def _floats(payload) -> np.ndarray:
    return np.asarray(payload, dtype=np.float64)


def save_model(model: TrainedModel, path) -> None:
    counts = model.counts
    cluster: dict = {"kind": model.cluster_model.kind, "centers": _reals(model.cluster_model.centers)}
    if model.cluster_model.kind == GMM:
        cluster["weights"] = _reals(model.cluster_model.weights)
        cluster["variances"] = _reals(model.cluster_model.variances)
    payload = {
        "format_version": FORMAT_VERSION,
        "schema": {
            "names": list(model.schema.names),
            "cardinalities": list(model.schema.cardinalities),
        },
        "patch": {
            "patch_w": model.patch_cfg.patch_w,
            "patch_h": model.patch_cfg.patch_h,
            "stride_x": model.patch_cfg.stride_x,
            "stride_y": model.patch_cfg.stride_y,
        },
        "embedder": {
            "mean": _reals(model.embedder.mean),
            "components": _reals(model.embedder.components),
            "explained_variance": _reals(model.embedder.explained_variance),
        },
        "cluster": cluster,
        "counts": {
            "r_clusters": counts.r_clusters,
            "n_images": counts.n_images,
            "n_fully_labeled": counts.n_fully_labeled,
            "s_l": [int(x) for x in counts.s_l],
            "svr_l": [[[int(x) for x in row] for row in table] for table in counts.svr_l],
            "n_lz": {",".join(map(str, z)): [int(x) for x in arr] for z, arr in counts.n_lz.items()},
            "n_z": {",".join(map(str, z)): int(n) for z, n in counts.n_z.items()},
        },
        "rules": list(model.rules),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _parse_combo(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def load_model(path) -> TrainedModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"model file {path} is not valid JSON: {exc}") from None
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unrecognized model format version {version!r}")
    schema = ConceptSchema(
        tuple(payload["schema"]["names"]),
        tuple(int(c) for c in payload["schema"]["cardinalities"]),
    )
    patch_cfg = PatchConfig(**payload["patch"])
    emb = payload["embedder"]
    embedder = Embedder(
        _floats(emb["mean"]), _floats(emb["components"]), _floats(emb["explained_variance"])
    )
    cl = payload["cluster"]
    cluster = ClusterModel(
        cl["kind"],
        _floats(cl["centers"]),
        _floats(cl["weights"]) if "weights" in cl else None,
        _floats(cl["variances"]) if "variances" in cl else None,
    )
    ct = payload["counts"]
    counts = CountTables(
        schema=schema,
        r_clusters=int(ct["r_clusters"]),
        n_images=int(ct["n_images"]),
        n_fully_labeled=int(ct["n_fully_labeled"]),
        s_l=np.asarray(ct["s_l"], dtype=np.int64),
        svr_l=tuple(np.asarray(t, dtype=np.int64) for t in ct["svr_l"]),
        n_lz={_parse_combo(k): np.asarray(v, dtype=np.int64) for k, v in sorted(ct["n_lz"].items())},
        n_z={_parse_combo(k): int(v) for k, v in sorted(ct["n_z"].items())},
    )
    _validate_counts(counts)
    return TrainedModel(schema, patch_cfg, embedder, cluster, counts, tuple(payload["rules"]))


def _validate_counts(counts: CountTables) -> None:
    if counts.s_total <= 0:
        raise DataFormatError("model counts contain no embeddings")
    if sum(counts.n_z.values()) != counts.n_fully_labeled:
        raise DataFormatError("combination image counts disagree with the labeled total")
    for table in counts.svr_l:
        if table.shape[1] != counts.r_clusters or np.any(table < 0):
            raise DataFormatError("malformed per-concept count table")
    for z, arr in counts.n_lz.items():
        if len(z) != len(counts.schema) or arr.shape != (counts.r_clusters,):
            raise DataFormatError("malformed combination count table")
    # probabilities must re-derive cleanly
    probability_model(counts)
