"""Command-line surface: dataset builders, training, prediction, reports.

Exit codes: 0 success, 2 bad flags, 3 I/O or file-format failure,
4 numeric failure, 5 rule inconsistent with the training data.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .clustering import GMM, KMEANS
from .errors import (
    DataFormatError,
    FicblError,
    NumericError,
    PredictionError,
    RuleInconsistentError,
    RuleSyntaxError,
)
from .evaluation import (
    F1_AVERAGING,
    config_hash,
    evaluate_concepts,
    sweep_beta,
    write_sweep_report,
)
from .inference import DEFAULT_EPSILON
from .model import (
    PipelineConfig,
    image_occupancies,
    load_model,
    predict_records,
    save_model,
    train_model,
)
from .rules import parse_rules_text

_IDX_CANDIDATES = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
    ("images.idx", "labels.idx"),
]


def _find_idx_pair(source: Path) -> tuple[Path, Path]:
    for images, labels in _IDX_CANDIDATES:
        if (source / images).exists() and (source / labels).exists():
            return source / images, source / labels
    raise FileNotFoundError(f"no IDX image/label pair found under {source}")


def _pair(text: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must look like <int>x<int>") from None


def _beta_grid(text: str) -> list[float]:
    try:
        start, end, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("betas must look like start:end:step") from None
    if step <= 0 or end < start:
        raise argparse.ArgumentTypeError("betas must ascend: start <= end, step > 0")
    grid = []
    b = start
    while b <= end + 1e-12:
        grid.append(round(b, 12))
        b += step
    return grid


def _thresholds(text: str) -> dict[int, float]:
    out = {}
    for part in text.split(","):
        name, value = part.split("=")
        if not name.startswith("c") or not name[1:].isdigit():
            raise argparse.ArgumentTypeError(f"bad threshold key {name!r}")
        out[int(name[1:])] = float(value)
    return out


def _load_rules(path, schema):
    text = Path(path).read_text()
    try:
        return parse_rules_text(text, schema)
    except RuleSyntaxError as exc:
        raise DataFormatError(f"rules file {path}: {exc}") from None


def _pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--patch", type=lambda s: _pair(s, "--patch"), default=(28, 28))
    parser.add_argument("--stride", type=lambda s: _pair(s, "--stride"), default=(28, 28))
    parser.add_argument("--embed-dim", type=int, default=16)
    parser.add_argument("--clusters", type=int, default=80)
    parser.add_argument("--cluster-alg", choices=[KMEANS, GMM], default=GMM)
    parser.add_argument("--seed", type=int, default=0)


def _config(args) -> PipelineConfig:
    return PipelineConfig(
        patch_w=args.patch[0],
        patch_h=args.patch[1],
        stride_x=args.stride[0],
        stride_y=args.stride[1],
        embed_dim=args.embed_dim,
        clusters=args.clusters,
        algorithm=args.cluster_alg,
        seed=args.seed,
    )


def cmd_make_dataset(args) -> int:
    images_path, labels_path = _find_idx_pair(Path(args.source))
    samples = ds.load_idx(images_path, labels_path)
    if args.kind == "grid4":
        pool: dict[int, list[np.ndarray]] = {d: [] for d in range(10)}
        for img, digit in samples:
            if img.shape != (28, 28):
                raise DataFormatError("grid composition needs 28x28 source digits")
            pool[digit].append(img)
        data = ds.compose_grid_dataset(pool, args.n, args.seed)
    else:
        pool = {d: [] for d in range(10)}
        for img, digit in samples:
            pool[digit].append(img)
        data = ds.compose_annotated_dataset(pool, args.n, args.seed)
    ds.save_dataset(data, args.out)
    print(f"wrote {len(data)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = ds.load_dataset(args.data)
    model = train_model(data, _config(args))
    save_model(model, args.out)
    _write_cluster_posteriors(model, Path(args.out))
    print(f"trained on {len(data)} images; model written to {args.out}")
    return 0


def _write_cluster_posteriors(model, model_path: Path) -> None:
    """Sidecar table p(r,v|l): which concept values each cluster indicates."""
    prob = model.probability_model()
    tables = prob.in_cluster_posteriors(model.counts)
    out = model_path.with_suffix(model_path.suffix + ".clusters.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept", "value", "cluster", "posterior"])
        for r, name in enumerate(model.schema.names):
            for v in range(model.schema.cardinalities[r]):
                for l in range(model.counts.r_clusters):
                    writer.writerow([name, v + 1, l + 1, format(tables[r][v, l], ".17g")])


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = ds.load_dataset(args.data)
    rules = _load_rules(args.rules, model.schema) if args.rules else None
    thresholds = args.thresholds or {}
    predictions, decisions = predict_records(
        model, data.records, rules, args.epsilon, thresholds
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "concept", "value", "posterior", "assigned"])
        for i, pred in enumerate(predictions):
            for r, name in enumerate(model.schema.names):
                for v, p in enumerate(pred.posteriors[r], start=1):
                    writer.writerow([i, name, v, format(float(p), ".17g"), ""])
                if r in thresholds:
                    chosen = ";".join(str(v) for v in decisions[i][r])
                else:
                    chosen = str(pred.argmax()[r])
                writer.writerow([i, name, "", "", chosen])
    print(f"wrote predictions for {len(predictions)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = ds.load_dataset(args.data)
    rules = _load_rules(args.rules, model.schema) if args.rules else None
    occupancies = image_occupancies(
        (model.embedder, model.cluster_model), data.records, model.patch_cfg
    )
    prob = model.probability_model()
    rule = None
    if rules:
        from .rules import combine_rules

        rule = combine_rules(rules)
    scores = evaluate_concepts(
        prob, model.counts, model.schema, occupancies, data.labels(), rule, args.epsilon
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = config_hash({"model": str(args.model), "data": str(args.data), "rules": bool(rules)})
    report = out / f"eval_{tag}.csv"
    with open(report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept", "f1"])
        for name, score in scores.items():
            writer.writerow([name, format(score, ".17g")])
    summary = out / f"eval_{tag}.txt"
    with open(summary, "w") as fh:
        fh.write(f"per-concept F1 ({F1_AVERAGING})\n")
        for name, score in scores.items():
            fh.write(f"{name}: {score:.4f}\n")
    print(f"wrote {report}")
    return 0


def cmd_sweep_beta(args) -> int:
    train = ds.load_dataset(args.data)
    if args.test:
        test = ds.load_dataset(args.test)
    else:
        split = int(0.7 * len(train))
        if split < 1 or split >= len(train):
            raise NumericError("dataset too small to split into train and test")
        test = ds.Dataset(train.schema, train.records[split:])
        train = ds.Dataset(train.schema, train.records[:split])
    if args.target_class is not None:
        train = ds.binarize_target(train, args.target_class)
        test = ds.binarize_target(test, args.target_class)
    try:
        rule_list = parse_rules_text(args.rule, train.schema)
    except RuleSyntaxError as exc:
        raise DataFormatError(f"--rule: {exc}") from None
    from .rules import combine_rules

    rule = combine_rules(rule_list)
    seeds = [args.seed + i for i in range(args.seeds)]
    cfg = _config(args)
    rows = sweep_beta(train, test, rule, args.betas, cfg, seeds, args.epsilon)
    payload = {"rule": args.rule, "betas": args.betas, "pipeline": cfg.payload()}
    csv_path, _ = write_sweep_report(rows, args.out, payload, seeds)
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ficbl",
        description="Patch-clustering concept learner with frequency-count inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="compose an experiment dataset from IDX digits")
    p.add_argument("--source", required=True)
    p.add_argument("--kind", choices=["grid4", "annotated"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    _pipeline_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-image concept posteriors")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rules")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--thresholds", type=_thresholds, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score per-concept F1 on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rules")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-beta", help="label-inversion sweep with and without a rule")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument(
        "--target-class",
        type=int,
        help="binarize the target one-vs-rest at this value before sweeping",
    )
    p.add_argument("--rule", required=True)
    p.add_argument("--betas", type=_beta_grid, required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    _pipeline_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_beta)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RuleInconsistentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (NumericError, PredictionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataFormatError, FileNotFoundError, NotADirectoryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FicblError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
