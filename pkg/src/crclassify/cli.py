"""Command-line surface: train, predict, simulate, bench, crossval, diagnose.

Exit codes: 0 success, 2 usage, 3 data or shape error, 4 numerical
failure, 5 I/O.  The CRC_THREADS environment variable caps BLAS worker
threads.  Every output CSV starts with '#'-prefixed provenance lines
(package version, seed, config hash) and is written atomically
(temp file then rename).  No timestamps are embedded, so identical
seeds give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import fit_dlda_baseline, predict_dlda_baseline
from .data import (
    Dataset,
    grouped_balanced_split,
    load_dataset,
    pct_var_explained,
    save_matrix_cache,
)
from .ensemble import component_predictions, fit_crc, load_model, predict_batch, save_model
from .errors import (
    ConfigError,
    CorruptModel,
    CrcError,
    DegenerateContrast,
    DegenerateGram,
    DowndateSingular,
    SingularDenseFit,
)
from .gram import LabelVector
from .meta import combined_scores
from .simulator import CLASSIFIERS, MODELS, SimConfig, bayes_rates, generate, run_benchmark

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5

_NUMERICAL_ERRORS = (DegenerateGram, DowndateSingular, DegenerateContrast, SingularDenseFit)


def _apply_thread_cap() -> None:
    cap = os.environ.get("CRC_THREADS")
    if not cap:
        return
    try:
        limit = max(1, int(cap))
    except ValueError:
        raise ConfigError(f"CRC_THREADS must be an integer, got {cap!r}") from None
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=limit)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(limit)


def _load_config_file(path) -> dict[str, str]:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip().strip("\"'")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return values


def _merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill parser defaults from the config file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    file_values = _load_config_file(args.config)
    for key, raw in file_values.items():
        if not hasattr(args, key):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, key) == parser.get_default(key):
            default = parser.get_default(key)
            if isinstance(default, bool):
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            elif isinstance(default, int):
                setattr(args, key, int(raw))
            elif isinstance(default, float):
                setattr(args, key, float(raw))
            else:
                setattr(args, key, raw)


def _config_hash(args: argparse.Namespace) -> str:
    payload = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func",)
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _provenance(args: argparse.Namespace) -> list[str]:
    return [
        f"# crclassify {__version__}",
        f"# seed: {getattr(args, 'seed', 0)}",
        f"# config: {_config_hash(args)}",
        "# rng: philox",
    ]


def _write_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path, args, header: str, rows: list[str]) -> None:
    lines = _provenance(args) + [header] + rows
    _write_atomic(path, "\n".join(lines) + "\n")


def _load_cli_dataset(args) -> Dataset:
    return load_dataset(
        args.matrix,
        labels_path=args.labels,
        label_column=args.label_column,
        group_column=args.group_column,
        positive_label=args.positive_label,
        negative_label=args.negative_label,
    )


def _add_dataset_flags(sub) -> None:
    sub.add_argument("--matrix", required=True, help="matrix CSV/TSV or CRM1 cache")
    sub.add_argument("--labels", default=None, help="labels file (id, label[, group])")
    sub.add_argument("--label-column", dest="label_column", default=None)
    sub.add_argument("--group-column", dest="group_column", default=None)
    sub.add_argument("--positive-label", dest="positive_label", default=None)
    sub.add_argument("--negative-label", dest="negative_label", default=None)


def _cmd_train(args) -> int:
    ds = _load_cli_dataset(args)
    model = fit_crc(ds.matrix, ds.labels, seed=args.seed)
    save_model(model, args.out)
    if args.report:
        trace = model.trace
        report = {
            "package_version": __version__,
            "seed": args.seed,
            "config": _config_hash(args),
            "n": ds.n,
            "p": ds.p,
            "class_counts": [model.labels.n1, model.labels.n2],
            "label_mapping": ds.label_mapping,
            "n_features_selected": model.n_features_selected,
            "gram_fill_value": model.fill_value,
            "grid": trace.grid.tolist(),
            "estimated_errors": trace.estimated_errors.tolist(),
            "loo_accuracy": model.loo_accuracy,
            "loo_accuracy_dense": _loo_component_accuracy(model, 0),
            "loo_accuracy_sparse": _loo_component_accuracy(model, 1),
            "meta": {
                "intercept": model.meta.intercept,
                "coef_dense": model.meta.coef_dense,
                "coef_sparse": model.meta.coef_sparse,
                "estimated_error": model.meta.est_error,
            },
        }
        _write_atomic(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(
        f"trained on n={ds.n}, p={ds.p}; kept {model.n_features_selected} "
        f"sparse features; leave-one-out accuracy {model.loo_accuracy:.3f}"
    )
    return 0


def _loo_component_accuracy(model, column: int) -> float:
    """1-d LDA readout of one leave-one-out score column."""
    from .meta import fit_meta

    scores = model.loo_score_pairs[:, column]
    zeros = np.zeros_like(scores)
    pair = (scores, zeros) if column == 0 else (zeros, scores)
    m = fit_meta(pair[0], pair[1], model.labels)
    combined = combined_scores(m, pair[0], pair[1])
    predicted = np.where(combined >= 0, 1.0, -1.0)
    return float(np.mean(predicted == model.labels.values))


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = _read_matrix_only(args)
    labels, pairs, combined = predict_batch(model, ds[0])
    rows = [
        f"{sid},{int(lab)},{pair[0]!r},{pair[1]!r},{comb!r}"
        for sid, lab, pair, comb in zip(ds[1], labels, pairs, combined)
    ]
    _write_csv(
        args.out, args, "sample_id,label,dense_score,sparse_score,combined_score", rows
    )
    print(f"wrote predictions for {len(rows)} samples to {args.out}")
    return 0


def _read_matrix_only(args):
    from .data import _is_cache, _read_matrix_cache, _read_matrix_csv

    if _is_cache(args.matrix):
        matrix, sample_ids, _ = _read_matrix_cache(args.matrix)
    else:
        matrix, sample_ids, _ = _read_matrix_csv(args.matrix)
    return matrix, sample_ids


def _cmd_simulate(args) -> int:
    cfg = SimConfig(
        model=args.model, n=args.n, p=args.p, r=args.r,
        noise_scale=args.noise_scale,
        alpha_seed=args.seed, data_seed=args.seed + 1,
    )
    ds = generate(cfg)
    sample_ids = [f"s{i:05d}" for i in range(args.n)]
    feature_ids = [f"f{j}" for j in range(args.p)]
    if args.cache:
        save_matrix_cache(args.out_matrix, ds.features, sample_ids, feature_ids)
    else:
        header = "sample_id," + ",".join(feature_ids)
        rows = [
            sid + "," + ",".join(repr(v) for v in row)
            for sid, row in zip(sample_ids, ds.features)
        ]
        _write_atomic(args.out_matrix, "\n".join([header] + rows) + "\n")
    label_rows = [
        f"{sid},{'pos' if lab > 0 else 'neg'}"
        for sid, lab in zip(sample_ids, ds.labels)
    ]
    _write_atomic(args.out_labels, "\n".join(["sample_id,label"] + label_rows) + "\n")
    rates = bayes_rates(cfg)
    print(
        f"simulated {args.model} data n={args.n} p={args.p}; optimal accuracy "
        f"(sparse, dense, joint) = ({rates.sparse_only:.4f}, "
        f"{rates.dense_only:.4f}, {rates.joint:.4f})"
    )
    return 0


def _parse_list(text: str, cast) -> list:
    return [cast(x) for x in text.split(",") if x]


def _cmd_bench(args) -> int:
    models = _parse_list(args.models, str)
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}")
    classifiers = _parse_list(args.classifiers, str)
    grid = [
        (model, n, p)
        for model in models
        for n in _parse_list(args.n, int)
        for p in _parse_list(args.p, int)
    ]
    result = run_benchmark(
        grid,
        replicates=args.replicates,
        classifiers=classifiers,
        test_size=args.test_size,
        seed=args.seed,
        fixed_alpha=args.fixed_alpha,
    )
    rows = [
        f"{r.model},{r.n},{r.p},{r.classifier},{r.replicate},"
        f"{'' if np.isnan(r.accuracy) else repr(r.accuracy)},"
        f"{'' if r.n_features_selected is None else r.n_features_selected},{r.seed}"
        for r in result.records
    ]
    _write_csv(
        args.out, args,
        "model,n,p,classifier,replicate,accuracy,n_features_selected,seed", rows,
    )
    agg_rows = [
        f"{c.model},{c.n},{c.p},{c.classifier},{c.mean_accuracy!r},"
        f"{c.std_error!r},{c.replicates},"
        f"{'' if c.median_features is None else c.median_features!r}"
        for c in result.aggregate()
    ]
    _write_csv(
        args.aggregate, args,
        "model,n,p,classifier,mean_accuracy,std_error,replicates,median_features",
        agg_rows,
    )
    print(f"wrote {len(rows)} replicate rows to {args.out} and aggregates to {args.aggregate}")
    return 0


def _cmd_crossval(args) -> int:
    ds = _load_cli_dataset(args)
    classifiers = _parse_list(args.classifiers, str)
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {c!r}")
    records: list[tuple[int, str, float]] = []
    failures = 0
    for split_no in range(args.splits):
        plan = grouped_balanced_split(ds, frac=args.frac, seed=args.seed + split_no)
        try:
            records.extend(
                (split_no, clf, acc)
                for clf, acc in _evaluate_split(ds, plan, classifiers).items()
            )
        except CrcError as exc:
            failures += 1
            print(f"split {split_no} failed: {exc}", file=sys.stderr)
    rows = [f"{s},{clf},{acc!r}" for s, clf, acc in records]
    _write_csv(args.out, args, "split,classifier,accuracy", rows)
    agg_rows = []
    for clf in classifiers:
        accs = np.array([a for _, c, a in records if c == clf])
        if accs.size == 0:
            continue
        se = float(accs.std(ddof=1) / np.sqrt(accs.size)) if accs.size > 1 else 0.0
        agg_rows.append(f"{clf},{accs.mean()!r},{se!r},{accs.size}")
    _write_csv(args.aggregate, args, "classifier,mean_accuracy,std_error,splits", agg_rows)
    done = args.splits - failures
    print(f"crossval finished: {done}/{args.splits} splits; aggregates in {args.aggregate}")
    return 0


def _evaluate_split(ds: Dataset, plan, classifiers) -> dict[str, float]:
    train_y = LabelVector.from_values(ds.labels.values[plan.train])
    test_y = ds.labels.values[plan.test]
    out = {}
    crc_members = {"CRC", "CRC-S", "CRC-L"} & set(classifiers)
    if crc_members:
        model = fit_crc(ds.matrix[plan.train], train_y)
        preds = component_predictions(model, ds.matrix[plan.test])
        for clf in crc_members:
            out[clf] = float(np.mean(preds[clf] == test_y))
    if "DLDA-baseline" in classifiers:
        baseline = fit_dlda_baseline(ds.matrix[plan.train], train_y)
        labels = predict_dlda_baseline(baseline, ds.matrix[plan.test])
        out["DLDA-baseline"] = float(np.mean(labels == test_y))
    return out


def _cmd_diagnose(args) -> int:
    ds = _read_matrix_only(args)
    report = pct_var_explained(ds[0], k=args.k)
    rows = [
        f"{i + 1},{ev!r},{pct!r},{cum!r}"
        for i, (ev, pct, cum) in enumerate(
            zip(report.eigenvalues, report.per_component_pct, report.cumulative_pct)
        )
    ]
    _write_csv(args.out, args, "component,eigenvalue,pct_variance,cumulative_pct", rows)
    print(
        f"top {report.k} components explain {report.percentage:.1f}% of the variance"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crc",
        description="Cross-residualization classifier for p >> n data",
    )
    parser.add_argument("--version", action="version", version=f"crc {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--config", default=None, help="key = value options file")

    p_train = subs.add_parser("train", help="fit a model and write a CRC1 file")
    _add_dataset_flags(p_train)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--report", default=None, help="JSON training report path")
    common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_pred = subs.add_parser("predict", help="score new samples with a model file")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--matrix", required=True)
    p_pred.add_argument("--out", required=True)
    common(p_pred)
    p_pred.set_defaults(func=_cmd_predict)

    p_sim = subs.add_parser("simulate", help="write one simulated dataset")
    p_sim.add_argument("--model", required=True, choices=MODELS)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--p", type=int, required=True)
    p_sim.add_argument("--r", type=int, default=3)
    p_sim.add_argument("--noise-scale", dest="noise_scale", type=float, default=1.0)
    p_sim.add_argument("--out-matrix", dest="out_matrix", required=True)
    p_sim.add_argument("--out-labels", dest="out_labels", required=True)
    p_sim.add_argument("--cache", action="store_true", help="write CRM1 binary matrix")
    common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_bench = subs.add_parser("bench", help="replicated simulation benchmark")
    p_bench.add_argument("--models", default="correlated")
    p_bench.add_argument("--n", required=True, help="comma-separated sample sizes")
    p_bench.add_argument("--p", required=True, help="comma-separated feature counts")
    p_bench.add_argument("--replicates", type=int, default=20)
    p_bench.add_argument("--test-size", dest="test_size", type=int, default=1000)
    p_bench.add_argument("--classifiers", default=",".join(CLASSIFIERS))
    p_bench.add_argument("--fixed-alpha", dest="fixed_alpha", action="store_true")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--aggregate", required=True)
    common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_cv = subs.add_parser("crossval", help="grouped balanced split evaluation")
    _add_dataset_flags(p_cv)
    p_cv.add_argument("--splits", type=int, default=200)
    p_cv.add_argument("--frac", type=float, default=0.8)
    p_cv.add_argument("--classifiers", default="CRC,CRC-S,CRC-L")
    p_cv.add_argument("--out", required=True)
    p_cv.add_argument("--aggregate", required=True)
    common(p_cv)
    p_cv.set_defaults(func=_cmd_crossval)

    p_diag = subs.add_parser("diagnose", help="scree table and variance share")
    p_diag.add_argument("--matrix", required=True)
    p_diag.add_argument("--k", type=int, default=10)
    p_diag.add_argument("--out", required=True)
    common(p_diag)
    p_diag.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        _merge_config(args, parser)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CrcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
