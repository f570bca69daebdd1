"""Experiment drivers: F1 scoring, label-noise sweeps, posterior histograms.

All drivers are deterministic given their seeds; sweep cells share the
unsupervised pipeline stages (patching, embedding, clustering do not see
labels) and re-tally counts per noise realization.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .counts import apply_rule, fit_counts, probability_model
from .dataset import Dataset, invert_labels
from .errors import FicblError
from .inference import DEFAULT_EPSILON, predict
from .rules import Rule

F1_AVERAGING = "macro (unweighted over values present in the truth)"


def worker_count() -> int:
    """Parallelism cap: FICBL_THREADS when set, else the CPU count."""
    env = os.environ.get("FICBL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def macro_f1(predicted, truth, n_values: int) -> float:
    """Unweighted mean per-value F1 over the values present in the truth."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.size == 0 or predicted.shape != truth.shape:
        raise FicblError("predicted and truth value lists must be equal and non-empty")
    scores = []
    for v in range(1, n_values + 1):
        tp = int(np.sum((predicted == v) & (truth == v)))
        fp = int(np.sum((predicted == v) & (truth != v)))
        fn = int(np.sum((predicted != v) & (truth == v)))
        if tp + fn == 0:
            continue  # value absent from the truth
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        scores.append(f1)
    return float(np.mean(scores))


def probability_histogram(probabilities, bin_count: int) -> np.ndarray:
    """Equal-width histogram over [0, 1]; exact 1.0 lands in the last bin."""
    if bin_count < 2:
        raise FicblError("need at least two histogram bins")
    probs = np.asarray(list(probabilities), dtype=np.float64)
    idx = np.minimum((probs * bin_count).astype(np.int64), bin_count - 1)
    return np.bincount(idx, minlength=bin_count).astype(np.int64)


# --------------------------------------------------------------------------
# Shared pipeline plumbing for the experiment drivers
# --------------------------------------------------------------------------


def _argmax_concept(predictions, r: int):
    return [int(np.argmax(p.posteriors[r])) + 1 for p in predictions]


def _predict_all(prob, occupancies, epsilon):
    return [predict(prob, occ, epsilon) for occ in occupancies]


@dataclass(frozen=True)
class PreparedPipeline:
    """Label-independent training state reused across sweep cells."""

    train_assignments: list
    test_occupancies: list
    r_clusters: int


def prepare_pipeline(train: Dataset, test: Dataset, cfg) -> PreparedPipeline:
    from .model import cluster_assignments  # local import to avoid a cycle

    train_asg, test_occ = cluster_assignments(train, test, cfg)
    return PreparedPipeline(train_asg, test_occ, cfg.clusters)


# --------------------------------------------------------------------------
# Label-inversion sweep
# --------------------------------------------------------------------------


def sweep_beta(
    train: Dataset,
    test: Dataset,
    rule: Rule,
    beta_grid,
    cfg,
    seeds,
    epsilon: float = DEFAULT_EPSILON,
):
    """Target F1 with and without the rule across label-noise fractions.

    Returns rows [{beta, f1_no_rule_mean, f1_no_rule_std, f1_with_rule_mean,
    f1_with_rule_std}] averaged over the seeds.
    """
    if train.schema.cardinalities[0] != 2:
        raise FicblError("the label-inversion sweep requires a binary target")
    betas = [float(b) for b in beta_grid]
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise FicblError("inversion fractions must lie in [0, 1]")
    pipeline = prepare_pipeline(train, test, cfg)
    truth = [rec.label[0] for rec in test.records]

    def run_cell(beta: float, seed: int) -> tuple[float, float]:
        noisy = invert_labels(train, rule, beta, seed)
        counts = fit_counts(
            pipeline.train_assignments, noisy.labels(), pipeline.r_clusters, train.schema
        )
        prob = probability_model(counts)
        plain = _predict_all(prob, pipeline.test_occupancies, epsilon)
        f1_plain = macro_f1(_argmax_concept(plain, 0), truth, 2)
        ruled_model = apply_rule(prob, counts, rule, train.schema)
        ruled = _predict_all(ruled_model, pipeline.test_occupancies, epsilon)
        f1_ruled = macro_f1(_argmax_concept(ruled, 0), truth, 2)
        return f1_plain, f1_ruled

    cells = [(b, s) for b in betas for s in seeds]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        outcomes = list(pool.map(lambda c: run_cell(*c), cells))
    rows = []
    for i, beta in enumerate(betas):
        chunk = outcomes[i * len(seeds) : (i + 1) * len(seeds)]
        plain = np.array([c[0] for c in chunk])
        ruled = np.array([c[1] for c in chunk])
        rows.append(
            {
                "beta": beta,
                "f1_no_rule_mean": float(plain.mean()),
                "f1_no_rule_std": float(plain.std()),
                "f1_with_rule_mean": float(ruled.mean()),
                "f1_with_rule_std": float(ruled.std()),
            }
        )
    return rows


def sweep_cell_scores(train, test, rule, beta, cfg, seed, epsilon=DEFAULT_EPSILON):
    """Single (beta, seed) cell of the sweep: (no-rule F1, with-rule F1)."""
    rows = sweep_beta(train, test, rule, [beta], cfg, [seed], epsilon)
    return rows[0]["f1_no_rule_mean"], rows[0]["f1_with_rule_mean"]


# --------------------------------------------------------------------------
# Per-concept evaluation and the rule-hierarchy histogram driver
# --------------------------------------------------------------------------


def evaluate_concepts(prob, counts, schema, occupancies, labels, rule=None, epsilon=DEFAULT_EPSILON):
    """Arg-max macro F1 for every concept, optionally under a rule."""
    model = apply_rule(prob, counts, rule, schema) if rule is not None else prob
    predictions = _predict_all(model, occupancies, epsilon)
    scores = {}
    for r, name in enumerate(schema.names):
        truth = [lab[r] for lab in labels]
        scores[name] = macro_f1(
            _argmax_concept(predictions, r), truth, schema.cardinalities[r]
        )
    return scores


def target_posteriors_by_rule(
    train: Dataset,
    test: Dataset,
    cfg,
    rules: dict[str, Rule],
    target_value: int = 2,
    epsilon: float = DEFAULT_EPSILON,
):
    """Target-value posteriors on the test set, plain and under each rule.

    Returns {label: array of posteriors}; the "none" entry always comes
    first.  The model is trained once; each rule only reweights tables.
    """
    pipeline = prepare_pipeline(train, test, cfg)
    counts = fit_counts(
        pipeline.train_assignments, train.labels(), pipeline.r_clusters, train.schema
    )
    prob = probability_model(counts)
    out = {}
    for label, rule in [("none", None)] + list(rules.items()):
        model = prob if rule is None else apply_rule(prob, counts, rule, train.schema)
        predictions = _predict_all(model, pipeline.test_occupancies, epsilon)
        out[label] = np.array([p.posteriors[0][target_value - 1] for p in predictions])
    return out


def rule_hierarchy_histograms(
    train: Dataset,
    test: Dataset,
    cfg,
    rules: dict[str, Rule],
    target_value: int = 2,
    bin_count: int = 10,
    epsilon: float = DEFAULT_EPSILON,
):
    """Histogram of target posteriors without rules and under each rule.

    Used to show how increasingly detailed rules shrink the uncertain mass
    around one half when the training targets are heavily corrupted.
    """
    curves = target_posteriors_by_rule(train, test, cfg, rules, target_value, epsilon)
    return {label: probability_histogram(probs, bin_count) for label, probs in curves.items()}


def uncertain_fraction(probabilities, lo: float = 0.4, hi: float = 0.6) -> float:
    probs = np.asarray(list(probabilities), dtype=np.float64)
    return float(np.mean((probs > lo) & (probs < hi)))


# --------------------------------------------------------------------------
# Report output
# --------------------------------------------------------------------------


def config_hash(payload) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_sweep_report(rows, out_dir, payload, seeds) -> tuple[str, str]:
    """CSV and text summary for a sweep; file names carry config hash + seed."""
    from pathlib import Path

    tag = f"{config_hash(payload)}_s{min(seeds)}"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{tag}.csv"
    txt_path = out / f"sweep_{tag}.txt"
    header = ["beta", "f1_no_rule_mean", "f1_no_rule_std", "f1_with_rule_mean", "f1_with_rule_std"]
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format(row[h], ".17g") for h in header) + "\n")
    with open(txt_path, "w") as fh:
        fh.write(f"label-inversion sweep ({F1_AVERAGING})\n")
        fh.write(f"config {json.dumps(payload, sort_keys=True)}\n")
        fh.write(f"seeds {sorted(seeds)}\n")
        for row in rows:
            fh.write(
                f"beta={row['beta']:.3f}  "
                f"no-rule F1 {row['f1_no_rule_mean']:.4f} (sd {row['f1_no_rule_std']:.4f})  "
                f"with-rule F1 {row['f1_with_rule_mean']:.4f} (sd {row['f1_with_rule_std']:.4f})\n"
            )
    return str(csv_path), str(txt_path)
