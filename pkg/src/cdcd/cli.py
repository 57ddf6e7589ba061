"""Command-line entry point: ``cdcd {simulate,fit,predict,benchmark,report}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmark, estimator, io, metrics, simulate
from .model import CholeskyModel, InputError, assemble

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
THREADS_ENV = "CDCD_THREADS"

log = logging.getLogger("cdcd")


class NumericalFailure(RuntimeError):
    pass


def _positive_int(s) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_float(s) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _cap(s):
    if str(s).lower() in ("none", "off"):
        return None
    if str(s).lower() == "default":
        return "default"
    return int(s)


def _csv_list(s) -> list[str]:
    return [v.strip() for v in str(s).split(",") if v.strip()]


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdcd", description="Covariate-dependent Cholesky covariance estimation")
    p.add_argument("--config", help="key = value file; explicit flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write synthetic replicate datasets")
    s.add_argument("--structure", default="ar1", choices=simulate.KINDS)
    s.add_argument("--n", type=_positive_int, default=200)
    s.add_argument("--p", type=_positive_int, default=50)
    s.add_argument("--q", type=_positive_int, default=30)
    s.add_argument("--replicates", type=_positive_int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="sim")

    f = sub.add_parser("fit", help="fit a model from Y.csv and X.csv")
    f.add_argument("--y", required=False)
    f.add_argument("--x", required=False)
    f.add_argument("--out", default="model.json")
    f.add_argument("--summary", help="fit summary JSON (default: <out stem>.summary.json)")
    f.add_argument("--cv-report", help="write the cross-validation report JSON here")
    f.add_argument("--lambda", dest="lam", type=_nonneg_float)
    f.add_argument("--lambda-g", dest="lam_g", type=_nonneg_float)
    f.add_argument("--lambda-d", dest="lam_d", type=_nonneg_float)
    f.add_argument("--folds", type=_positive_int, default=5)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--cap", type=_cap, default="default", help="support cap for CV candidates, or 'none'")
    f.add_argument("--alphas", type=_csv_list, help="comma-separated mixing weights")
    f.add_argument("--n-lambda0", type=_positive_int, default=30)
    f.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)

    r = sub.add_parser("predict", help="subject covariance and precision matrices")
    r.add_argument("--model", required=False)
    r.add_argument("--x", required=False)
    r.add_argument("--out", default="predict")
    r.add_argument("--format", choices=("csv", "npz"), default="csv")

    b = sub.add_parser("benchmark", help="simulate, fit and score replicates")
    b.add_argument("--structure", type=_csv_list, default=["ar1"])
    b.add_argument("--n", type=_positive_int, default=200)
    b.add_argument("--p", type=_positive_int, default=50)
    b.add_argument("--q", type=_positive_int, default=30)
    b.add_argument("--replicates", type=_positive_int, default=20)
    b.add_argument("--seed", type=int)
    b.add_argument("--methods", type=_csv_list, default=list(benchmark.METHODS))
    b.add_argument("--folds", type=_positive_int, default=5)
    b.add_argument("--threads", type=_positive_int, help=f"worker processes (default: ${THREADS_ENV} or 1)")
    b.add_argument("--cap", type=_cap, default="default")
    b.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=False)
    b.add_argument("--out", default="bench")

    t = sub.add_parser("report", help="re-render tables from a benchmark directory, JSON or CSV")
    t.add_argument("--in", dest="source", required=False)
    t.add_argument("--out", help="write Markdown here instead of stdout")
    return p


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _apply_config(parser, argv, args):
    """Re-parse with config values installed as subparser defaults."""
    conf = io.read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    for key, value in conf.items():
        key = {"lambda": "lam", "lambda_g": "lam_g", "lambda_d": "lam_d", "in": "source"}.get(key, key)
        if key not in actions or key == "help":
            raise InputError(f"config key {key!r} is not an option of '{args.command}'")
        if isinstance(actions[key], argparse.BooleanOptionalAction):
            if value.lower() not in _BOOL:
                raise InputError(f"config key {key!r}: expected a boolean, got {value!r}")
            value = _BOOL[value.lower()]
        subparser.set_defaults(**{key: value})
    return parser.parse_args(argv)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise InputError(f"'{args.command}' needs: " + ", ".join("--" + m.replace("_", "-") for m in missing))


def cmd_simulate(args) -> int:
    _require(args, "seed")
    out = Path(args.out)
    simulate.CovarianceStructure(args.structure, args.p)
    width = max(3, len(str(args.replicates)))
    for r in range(args.replicates):
        s = benchmark.replicate_seed(args.seed, r)
        structure = simulate.CovarianceStructure(args.structure, args.p, seed=s)
        data = simulate.generate(structure, args.n, args.q, s)
        rep_dir = out / f"rep_{r + 1:0{width}d}"
        io.write_dataset(rep_dir, data)
        doc = data.truth.to_json()
        doc["replicate_seed"] = s
        io.write_json(rep_dir / "truth.json", doc)
    log.info("wrote %d replicate(s) under %s", args.replicates, out)
    return EXIT_OK


def cmd_fit(args) -> int:
    _require(args, "y", "x")
    data = io.read_dataset(args.y, args.x)
    fixed = [args.lam, args.lam_g]
    if any(v is None for v in fixed) and any(v is not None for v in fixed):
        raise InputError("--lambda and --lambda-g must be given together")
    alphas = [float(a) for a in args.alphas] if args.alphas else None
    model, report = estimator.fit_cdcd(data, lam=args.lam, lam_g=args.lam_g, lam_d=args.lam_d,
                                       folds=args.folds, seed=args.seed, standardize=args.standardize,
                                       alphas=alphas, n_lambda0=args.n_lambda0, cap=args.cap)
    if not all(np.all(np.isfinite(a)) for a in (model.phi.coef, model.beta.coef)):
        raise NumericalFailure("fit produced non-finite coefficients")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.to_json()  # fail before writing anything if not serializable
    io.write_json(out, model.to_json())
    summary = {
        "n": data.n, "p": data.p, "q": data.q,
        "y_names": data.y_names, "x_names": data.x_names,
        "phi_nonzeros": model.phi.nnz(),
        "nonzeros_per_covariate": {name: int(np.count_nonzero(model.phi.coef[k + 1]))
                                   for k, name in enumerate(data.x_names)},
        "intercept_nonzeros": int(np.count_nonzero(model.phi.coef[0])),
        "selected_covariates": [data.x_names[k - 1] for k in model.diagnostics["selected_covariates"]],
        "variance_covariates": [data.x_names[k - 1] for k in model.diagnostics["variance_covariates"]],
        "hyperparams": model.hyperparams,
        "diagnostics": model.diagnostics,
    }
    summary_path = Path(args.summary) if args.summary else out.with_name(out.stem + ".summary.json")
    io.write_json(summary_path, summary)
    if args.cv_report and report is not None:
        io.write_json(args.cv_report, report.to_json())
    print(json.dumps({"model": str(out), "summary": str(summary_path),
                      "phi_nonzeros": summary["phi_nonzeros"],
                      "selected_covariates": summary["selected_covariates"]}))
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args, "model", "x")
    try:
        model = CholeskyModel.from_json(io.read_json(args.model))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.model}: not a model file ({exc})") from None
    x_names, X = io.read_matrix_csv(args.x)
    if X.shape[1] != model.q:
        raise InputError(f"model expects q={model.q} covariates, X has {X.shape[1]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subj = [assemble(model, x) for x in X]
    eigs = np.array([c.min_eigenvalue() for c in subj])
    if not np.all(np.isfinite(eigs)):
        raise NumericalFailure("non-finite subject covariance")
    names = [f"y{i + 1}" for i in range(model.p)]
    if args.format == "npz":
        np.savez(out / "subjects.npz", sigma=np.stack([c.sigma for c in subj]),
                 precision=np.stack([c.precision for c in subj]), min_eigenvalue=eigs)
    else:
        width = max(4, len(str(len(subj))))
        for i, c in enumerate(subj, 1):
            io.write_matrix_csv(out / f"sigma_{i:0{width}d}.csv", c.sigma, names)
            io.write_matrix_csv(out / f"precision_{i:0{width}d}.csv", c.precision, names)
    io.write_matrix_csv(out / "pd_certificate.csv",
                        np.column_stack([np.arange(1, len(subj) + 1), eigs]), ["subject", "min_eigenvalue"])
    if not np.all(eigs > 0):
        raise NumericalFailure(f"{int(np.sum(eigs <= 0))} subject(s) failed the PD check")
    return EXIT_OK


def _report_json(rep: metrics.BenchmarkReport) -> dict:
    return dataclasses.asdict(rep)


def cmd_benchmark(args) -> int:
    _require(args, "seed")
    workers = args.threads if args.threads is not None else _default_threads()
    fit_kw = {} if args.cap == "default" else {"cap": args.cap}
    cfgs = [benchmark.BenchmarkConfig(structure=s, n=args.n, p=args.p, q=args.q, replicates=args.replicates,
                                      seed=args.seed, methods=args.methods, folds=args.folds,
                                      workers=workers, standardize=args.standardize, fit_kw=fit_kw)
            for s in args.structure]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = metrics.BenchmarkReport()
    for cfg in cfgs:
        report.merge(benchmark.run_benchmark(cfg))
    (out / "report.csv").write_text(report.to_csv())
    md = report.to_markdown()
    (out / "report.md").write_text(md)
    io.write_json(out / "report.json", _report_json(report))
    print(md, end="")
    if report.pd_violations:
        return EXIT_NUMERIC
    return EXIT_PARTIAL if report.failures else EXIT_OK


def cmd_report(args) -> int:
    _require(args, "source")
    src = Path(args.source)
    if src.is_dir():
        src = src / "report.json" if (src / "report.json").is_file() else src / "report.csv"
    if not src.is_file():
        raise InputError(f"no such file: {src}")
    if src.suffix == ".json":
        doc = io.read_json(src)
        try:
            rep = metrics.BenchmarkReport(**{k: doc[k] for k in ("records", "failures", "pd_checks",
                                                                    "pd_violations", "timings")},
                                         certificates=doc.get("certificates", []))
        except KeyError as exc:
            raise InputError(f"{src}: missing field {exc}") from None
    else:
        rep = metrics.BenchmarkReport.from_csv(src.read_text())
    md = rep.to_markdown()
    if args.out:
        Path(args.out).write_text(md)
    else:
        print(md, end="")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "benchmark": cmd_benchmark, "report": cmd_report}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError, AssertionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
