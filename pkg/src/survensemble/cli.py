"""Command-line entry point: ``survensemble <command> [options]``.

Exit codes: 0 on success, 2 for input errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._random import THREADS_ENV, default_threads, derive_seed, substream
from .bart import (
    BartConfig,
    BartPosterior,
    BartPriors,
    fit_bart_survival,
    partial_dependence_survival,
    variable_usage,
)
from .cox import backward_stepwise_aic
from .data import ConvergenceError, SurvDataset, SurvivalDataError, read_covariate_csv, read_csv
from .metrics import (
    brier_curve,
    concordance_index,
    iauc,
    integrated_brier,
    roc_at_time,
    write_roc_csv,
)
from .models import MODEL_KINDS, fit_model, load_model, risk_scores, survival_batch
from .rsf import Forest, RsfConfig, fit_forest, variable_importance
from .sim import DEFAULT_MODELS, PROFILES, SimDesign, run_study

log = logging.getLogger("survensemble")

EXIT_INPUT = 2
EXIT_NUMERIC = 3
SPLIT_RULES = {"logrank": "log_rank", "logrank-score": "log_rank_score"}


# -- helpers ----------------------------------------------------------------


def _run_info(args) -> dict:
    return {"seed": args.seed, "profile": args.profile, "version": __version__}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _save_model(model, path: Path, args) -> None:
    doc = model.to_dict()
    doc["run"] = _run_info(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def _rsf_config(args) -> RsfConfig:
    n_trees = args.ntrees or PROFILES[args.profile]["rsf_trees"]
    return RsfConfig(
        n_trees=n_trees,
        mtry=args.mtry,
        min_terminal_deaths=args.min_deaths,
        split_rule=SPLIT_RULES[args.split],
        nsplit=args.nsplit,
        seed=args.seed,
    )


def _bart_config(args, m: int | None = None) -> BartConfig:
    prof = PROFILES[args.profile]
    return BartConfig(
        priors=BartPriors(m=m or args.ntrees or 50),
        n_burn=prof["bart_burn"] if args.burn is None else args.burn,
        n_keep=prof["bart_keep"] if args.keep is None else args.keep,
        thin=args.thin,
        seed=args.seed,
        max_grid_points=args.max_grid,
    )


def _fit(kind: str, data: SurvDataset, args):
    return fit_model(kind, data, _rsf_config(args), _bart_config(args), n_jobs=args.threads)


def _read(args, path=None) -> SurvDataset:
    return read_csv(path or args.data, args.schema)


def _stratified_split(event: np.ndarray, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Train/test indices preserving the censoring rate within each split."""
    train = []
    for d in (0, 1):
        idx = np.flatnonzero(event == d)
        idx = idx[rng.permutation(idx.size)]
        train.append(idx[: int(round(frac * idx.size))])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(event.size), train)
    return train, test


def _default_auc_times(test: SurvDataset) -> np.ndarray:
    ev = test.time[test.event == 1]
    return np.percentile(ev if ev.size else test.time, [25, 50, 75])


def _evaluate(model, test: SurvDataset, times=None, tau=None) -> tuple[dict, list, np.ndarray, np.ndarray]:
    X = np.asarray(test.X)
    batch = survival_batch(model, X)
    scores = risk_scores(model, X, batch)
    tmax = float(test.time.max())
    tau = tmax if tau is None else float(tau)
    if not 0 < tau <= tmax:
        raise SurvivalDataError(f"tau={tau} lies beyond the test support (0, {tmax}]")
    times = _default_auc_times(test) if times is None else np.asarray(times, dtype=float)
    rocs = []
    for t in times:
        try:
            rocs.append(roc_at_time(scores, test, t))
        except SurvivalDataError as exc:
            log.warning("no ROC at t=%g: %s", t, exc)
    ev_times = np.unique(test.time[(test.event == 1) & (test.time <= tau)])
    brier_times = np.unique(np.concatenate([batch.grid.times, test.time]))
    brier_times = brier_times[brier_times < tau]
    report = {
        "cindex": concordance_index(scores, test),
        "auc": {repr(float(r.t)): r.auc for r in rocs},
        "roc_dropped": {repr(float(r.t)): r.n_dropped for r in rocs},
        "iauc": iauc(scores, test, ev_times),
        "ibs": integrated_brier(batch, test, tau),
        "tau": tau,
        "n": test.n,
        "n_events": test.n_events,
    }
    return report, rocs, brier_times, brier_curve(batch, test, brier_times) if brier_times.size else np.array([])


# -- commands ---------------------------------------------------------------


def cmd_fit(args) -> None:
    data = _read(args)
    t0 = time.perf_counter()
    model = _fit(args.model, data, args)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    _save_model(model, out, args)
    scores = risk_scores(model, np.asarray(data.X))
    report = {
        "command": "fit",
        "model": args.model,
        "n": data.n,
        "n_events": data.n_events,
        "train_cindex": concordance_index(scores, data) if args.model != "km" else 0.5,
        "seconds": round(elapsed, 3),
        **_run_info(args),
    }
    if args.model == "bart":
        report["acceptance"] = model.acceptance
    _write_json(Path(args.report) if args.report else out.with_suffix(".report.json"), report)
    print(f"wrote {out}")


def cmd_predict(args) -> None:
    model = load_model(args.model_file)
    X = read_covariate_csv(args.data, model.schema) if hasattr(model, "schema") else None
    if X is None:
        with open(args.data) as fh:
            n = sum(1 for line in fh if line.strip()) - 1
        X = np.zeros((n, 0))
    batch = survival_batch(model, X)
    times = batch.grid.times if args.times is None else np.asarray(args.times, dtype=float)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "time", "survival"])
        for t in times:
            col = batch.at(t)
            for i, s in enumerate(col):
                w.writerow([i, repr(float(t)), repr(float(s))])
    print(f"wrote {out}")


def _write_brier(path: Path, times, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "brier"])
        for t, b in zip(times, values):
            w.writerow([repr(float(t)), repr(float(b))])


def cmd_evaluate(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.repeats:
        if not args.model:
            raise SurvivalDataError("--repeats needs --model KIND (the model is refitted per split)")
        data = _read(args)
        records = []
        for r in range(args.repeats):
            train, test = _stratified_split(np.asarray(data.event), args.train_frac, substream(args.seed, "split", r))
            tr, te = data.subset(train), data.subset(test)
            rep_args = argparse.Namespace(**{**vars(args), "seed": derive_seed(args.seed, "repeat", r)})
            model = _fit(args.model, tr, rep_args)
            report, _, _, _ = _evaluate(model, te, args.times, None)
            report.update({
                "repeat": r,
                "n_train": tr.n,
                "censoring_train": float(1 - tr.event.mean()),
                "censoring_test": float(1 - te.event.mean()),
            })
            records.append(report)
        pooled = {
            key: {"median": float(np.median([rec[key] for rec in records])),
                  "mean": float(np.mean([rec[key] for rec in records]))}
            for key in ("cindex", "iauc", "ibs")
        }
        doc = {
            "command": "evaluate",
            "model": args.model,
            "repeats": records,
            "pooled": pooled,
            "censoring_full": float(1 - data.event.mean()),
            **_run_info(args),
        }
        _write_json(out / "metrics.json", doc)
        print(f"wrote {out / 'metrics.json'}")
        return
    if not args.model_file:
        raise SurvivalDataError("evaluate needs --model-file, or --model with --repeats")
    model = load_model(args.model_file)
    test = read_csv(args.data, getattr(model, "schema", None) or None)
    report, rocs, bt, bs = _evaluate(model, test, args.times, args.tau)
    report.update({"command": "evaluate", **_run_info(args)})
    _write_json(out / "metrics.json", report)
    write_roc_csv(rocs, out / "roc.csv")
    _write_brier(out / "brier.csv", bt, bs)
    print(f"wrote {out / 'metrics.json'}")


def cmd_select(args) -> None:
    data = _read(args)
    model = load_model(args.model_file) if args.model_file else None
    need = {"rsf-vimp": Forest, "bart-usage": BartPosterior}.get(args.method)
    if model is not None and (need is None or not isinstance(model, need)):
        raise SurvivalDataError(f"method {args.method!r} cannot use a {type(model).__name__} artifact")
    doc = {"command": "select", "method": args.method, **_run_info(args)}
    if args.method == "cox-stepwise":
        res = backward_stepwise_aic(data)
        doc["selected"] = list(res.selected)
        doc["trace"] = [{"removed": name, "aic": aic} for name, aic in res.trace]
        doc["final_aic"] = res.final_model.aic
    elif args.method == "rsf-vimp":
        forest = model or fit_forest(data, _rsf_config(args), n_jobs=args.threads)
        vimp = variable_importance(forest, data, seed=args.seed)
        doc["ranking"] = [{"covariate": k, "vimp": v} for k, v in sorted(vimp.items(), key=lambda kv: -kv[1])]
    else:
        posts = {str(model.config.priors.m): model} if model else {}
        if not posts:
            for m in args.ntrees_list:
                posts[str(m)] = fit_bart_survival(data, _bart_config(args, m))
        doc["usage"] = {m: variable_usage(p) for m, p in posts.items()}
        doc["ranking"] = {
            m: [k for k, _ in sorted(u.items(), key=lambda kv: -kv[1])] for m, u in doc["usage"].items()
        }
    _write_json(Path(args.out), doc)
    print(f"wrote {args.out}")


def cmd_pdp(args) -> None:
    post = load_model(args.model_file)
    if not isinstance(post, BartPosterior):
        raise SurvivalDataError("pdp needs a survival BART posterior")
    names = [c.name for c in post.schema]
    if args.covariate not in names:
        raise SurvivalDataError(f"unknown covariate {args.covariate!r}; known: {names}")
    data = read_csv(args.data, post.schema)
    cov = post.schema[names.index(args.covariate)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "value", "time", "mean", "lo", "hi"])
        for raw in args.values:
            val = raw if cov.is_categorical else float(raw)
            if cov.is_categorical and raw not in cov.levels:
                raise SurvivalDataError(f"{raw!r} is not a level of {cov.name!r}")
            if len(names) == 1:
                raise SurvivalDataError("partial dependence needs at least one other covariate")
            pd = partial_dependence_survival(post, {cov.name: val}, data)
            for t, m, lo, hi in zip(post.grid.times, pd.curve.values, pd.lower, pd.upper):
                w.writerow([cov.name, raw, repr(float(t)), repr(float(m)), repr(float(lo)), repr(float(hi))])
    print(f"wrote {out}")


def cmd_simulate(args) -> None:
    design = SimDesign(kind=args.design, n=args.n, censor_target=args.censor, reps=args.reps, seed=args.seed)
    t0 = time.perf_counter()
    res = run_study(design, args.models, profile=args.profile, n_jobs=args.threads)
    log.info("simulation finished in %.1f s", time.perf_counter() - t0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "simulation.csv")
    res.write_json(out / "summary.json", {"command": "simulate", **_run_info(args)})
    print(f"wrote {out / 'simulation.csv'} and {out / 'summary.json'}")


# -- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for every random stream (default 0)")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    prof = p.add_mutually_exclusive_group()
    prof.add_argument("--fast", dest="profile", action="store_const", const="fast",
                      help="desk-scale settings: RSF 250 trees, BART burn 1000 / keep 2000")
    prof.add_argument("--full", dest="profile", action="store_const", const="full",
                      help="published settings: RSF 1000 trees, BART burn 5000 / keep 10000 (default)")
    p.set_defaults(profile="full")
    p.add_argument("--schema", default=None, help="JSON covariate schema; otherwise kinds are inferred")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("forest / BART")
    g.add_argument("--ntrees", type=int, default=None,
                   help="trees: RSF default 1000 (250 with --fast); BART default m=50")
    g.add_argument("--mtry", type=int, default=None, help="RSF candidate covariates per node (default ceil(sqrt(p)))")
    g.add_argument("--min-deaths", type=int, default=3, help="RSF minimum deaths per terminal node (default 3)")
    g.add_argument("--split", choices=sorted(SPLIT_RULES), default="logrank", help="RSF split rule (default logrank)")
    g.add_argument("--nsplit", type=int, default=0, help="RSF random split points per covariate, 0 = all (default 0)")
    g.add_argument("--burn", type=int, default=None, help="BART burn-in sweeps (default 5000; 1000 with --fast)")
    g.add_argument("--keep", type=int, default=None, help="BART retained draws (default 10000; 2000 with --fast)")
    g.add_argument("--thin", type=int, default=1, help="BART sweeps per retained draw (default 1)")
    g.add_argument("--max-grid", type=int, default=100, help="BART maximum time-grid points (default 100)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survensemble", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and save it")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--data", required=True, help="training CSV with time, event and covariate columns")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", default=None, help="fit report JSON (default <out>.report.json)")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predicted survival curves for new subjects")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True, help="CSV holding the model's covariate columns")
    p.add_argument("--out", required=True, help="long CSV: subject,time,survival")
    p.add_argument("--times", type=float, nargs="+", default=None, help="evaluation times (default: model grid)")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="C-index, time-dependent AUC, IAUC and integrated Brier score")
    p.add_argument("--model-file", default=None, help="fitted model to evaluate on --data")
    p.add_argument("--model", choices=MODEL_KINDS, default=None, help="model kind refitted per split with --repeats")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--times", type=float, nargs="+", default=None,
                   help="AUC times (default: quartiles of test event times)")
    p.add_argument("--tau", type=float, default=None, help="IBS horizon (default: largest test time)")
    p.add_argument("--repeats", type=int, default=0, help="random 2:1 splits stratified on the event indicator")
    p.add_argument("--train-frac", type=float, default=2 / 3, help="training fraction per split (default 2/3)")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="rank covariates")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("cox-stepwise", "rsf-vimp", "bart-usage"), required=True)
    p.add_argument("--model-file", default=None, help="reuse a fitted forest or posterior")
    p.add_argument("--ntrees-list", type=int, nargs="+", default=[100, 50, 20],
                   help="BART tree counts for bart-usage (default 100 50 20)")
    p.add_argument("--out", required=True)
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("pdp", help="BART partial-dependence survival curves")
    p.add_argument("--model-file", required=True, help="survival BART posterior")
    p.add_argument("--data", required=True, help="data supplying the other covariates")
    p.add_argument("--covariate", required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("--out", required=True, help="long CSV: covariate,value,time,mean,lo,hi")
    _common(p)
    p.set_defaults(func=cmd_pdp)

    p = sub.add_parser("simulate", help="Weibull PH / NPH simulation study")
    p.add_argument("--design", choices=("ph", "nph"), required=True)
    p.add_argument("--reps", type=int, default=100, help="replicates (default 100)")
    p.add_argument("--n", type=int, default=300, help="subjects per replicate (default 300)")
    p.add_argument("--censor", type=float, default=0.2, help="target censoring fraction (default 0.2)")
    p.add_argument("--models", nargs="+", default=list(DEFAULT_MODELS), choices=DEFAULT_MODELS)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    try:
        args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SurvivalDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
