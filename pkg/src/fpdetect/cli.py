"""Command-line entry point: ``fpdetect <subcommand> ...``.

Exit status is 0 on success, 1 on a data or runtime error and 2 on a usage
error. Logs go to stderr. Settings resolve as flag, then environment
variable, then built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__

log = logging.getLogger("fpdetect")

ENV_JOBS = "FPDETECT_JOBS"
ENV_LOG_LEVEL = "FPDETECT_LOG_LEVEL"
ENV_ENDPOINT = "FPDETECT_POLISH_ENDPOINT"


class UsageError(Exception):
    pass


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"environment variable {name} must be an integer, got {raw!r}") from None


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _format_for(path: str | None, explicit: str | None, allowed: tuple[str, ...]) -> str:
    fmt = explicit
    if fmt is None and path and path != "-":
        fmt = Path(path).suffix.lstrip(".").lower() or None
        if fmt == "txt":
            fmt = "text"
    fmt = fmt or allowed[0]
    if fmt not in allowed:
        raise UsageError(f"unsupported output format {fmt!r}; choose from {', '.join(allowed)}")
    return fmt


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


# subcommands -------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .corpus import load_corpus, write_corpus
    from .fixtures import load_fixture_abstracts, make_preprint_corpus

    if args.fixture == "abstracts":
        docs = load_fixture_abstracts()
        if args.n is not None:
            docs = docs[:args.n]
    elif args.fixture == "preprints":
        if args.seed is None:
            raise UsageError("--seed is required for --fixture preprints")
        docs = make_preprint_corpus(args.n or 6000, seed=args.seed)
    else:
        if not args.input:
            raise UsageError("ingest needs --in or --fixture")
        docs = load_corpus(args.input)
    write_corpus(docs, args.out)
    log.info("wrote %d documents to %s", len(docs), args.out)
    return 0


def cmd_pair(args) -> int:
    from .corpus import load_corpus, write_corpus
    from .polisher import HttpBackend, PromptSet, StubBackend, build_pairs

    originals = load_corpus(args.input)
    prompts = PromptSet.from_file(args.prompts)
    if args.backend == "stub":
        backend = StubBackend(seed=args.seed)
    else:
        endpoint = args.endpoint or os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise UsageError(f"http backend needs --endpoint or {ENV_ENDPOINT}")
        backend = HttpBackend(endpoint, timeout=args.timeout)
    pairs = build_pairs(originals, backend, prompts, seed=args.seed,
                        strip_quotes=not args.keep_quotes,
                        require_pre_launch=args.require_pre_launch, n_jobs=args.jobs)
    write_corpus(pairs, args.out)
    log.info("wrote %d documents (%d pairs) to %s", len(pairs), len(pairs) // 2, args.out)
    return 0


def cmd_train(args) -> int:
    from .corpus import load_corpus, split_disjoint, write_corpus
    from .models import EnsembleConfig, save_model, train_ensemble
    from .vectorize import TfIdfConfig

    docs = load_corpus(args.pairs)
    if args.test_fraction:
        if not args.held_out:
            raise UsageError("--test-fraction needs --held-out to store the test split")
        train, test = split_disjoint(docs, seed=args.seed, test_fraction=args.test_fraction)
        write_corpus(test, args.held_out)
        log.info("held out %d documents to %s", len(test), args.held_out)
    else:
        train = docs
    config = EnsembleConfig(tfidf=TfIdfConfig(min_df=args.min_df))
    log.info("training on %d documents", len(train))
    model = train_ensemble(train, config, seed=args.seed, n_jobs=args.jobs)
    save_model(model, args.out)
    log.info("model written to %s (vocabulary %d)", args.out, model.tfidf.dim)
    return 0


def cmd_detect(args) -> int:
    from .corpus import load_corpus
    from .evalsim import write_predictions
    from .models import load_model

    model = load_model(args.model)
    docs = load_corpus(args.input)
    preds = model.predict_many([d.text for d in docs])
    write_predictions([d.id for d in docs], preds, args.out)
    log.info("%d predictions, %d labeled 1", len(preds), sum(p.label for p in preds))
    return 0


def cmd_simulate(args) -> int:
    from .corpus import access_status, default_policy, load_corpus
    from .evalsim import load_predictions, run_simulation, run_stratified, score_with_model, score_with_predictions
    from .models import load_model

    if bool(args.model) == bool(args.predictions):
        raise UsageError("give exactly one of --model or --predictions")
    fmt = _format_for(args.out, args.format, ("json", "csv"))
    test = load_corpus(args.test)
    if args.model:
        pool = score_with_model(load_model(args.model), test)
    else:
        pool = score_with_predictions(load_predictions(args.predictions), test)
    if args.stratify == "access":
        policy = default_policy()
        strata = {d.id: ("no_access" if access_status(policy, d, rule=args.rule) else "access") for d in test}
        reports = run_stratified(pool, strata, n_iter=args.iters, seed=args.seed, n_jobs=args.jobs)
        if fmt != "json":
            raise UsageError("stratified reports are written as json")
        _write_text(args.out, _dump_json({"kind": "eval_report_strata",
                                          "strata": {k: json.loads(r.to_json()) for k, r in reports.items()}}))
        return 0
    report = run_simulation(pool, n_iter=args.iters, seed=args.seed, n_jobs=args.jobs)
    _write_text(args.out, report.to_json() + "\n" if fmt == "json" else report.to_csv())
    agg = report.aggregate()
    log.info("accuracy %.4f +/- %.4f, gap %.4f +/- %.4f", agg["accuracy"]["mean"], agg["accuracy"]["se"],
             agg["gap"]["mean"], agg["gap"]["se"])
    return 0


def cmd_fingerprint(args) -> int:
    from .corpus import load_corpus
    from .evalsim import load_predictions
    from .fingerprint import conditional_to_csv, doc_frequency_shift, label_conditional_frequency, top_shifts

    docs = load_corpus(args.input)
    if args.predictions:
        preds = load_predictions(args.predictions)
        missing = [d.id for d in docs if d.id not in preds]
        if missing:
            raise ValueError(f"{len(missing)} documents have no prediction, e.g. {missing[0]}")
        words = [w.strip().lower() for w in (args.words or "").split(",") if w.strip()]
        if not words:
            raise UsageError("--words is required with --predictions")
        rows = label_conditional_frequency([d.text for d in docs], [preds[d.id][1] for d in docs], words)
        _write_text(args.out, conditional_to_csv(rows))
        return 0
    originals = [d.text for d in docs if d.label == 0]
    polished = [d.text for d in docs if d.label == 1]
    table = doc_frequency_shift(originals, polished)
    if args.top:
        top = top_shifts(table, args.top)
        if top.truncated:
            log.warning("only %d words available", len(table.rows))
        lines = ["direction,word,frac_original,frac_polished,shift"]
        for direction, rows in (("increase", top.increases), ("decrease", top.decreases)):
            lines.extend(f"{direction},{r.word},{r.frac_original!r},{r.frac_polished!r},{r.shift!r}" for r in rows)
        _write_text(args.out, "\n".join(lines) + "\n")
    else:
        _write_text(args.out, table.to_csv())
    return 0


def _trend_payload(series, title: str = "") -> dict:
    return {"kind": "trend_series", "title": title,
            "series": {g: {"meta": s.meta,
                           "rows": [{"year_month": list(r.year_month), "n": r.n, "k": r.k,
                                     "rolling": None if r.rolling != r.rolling else r.rolling}
                                    for r in s.rows]}
                       for g, s in sorted(series.items())}}


def _trend_from_payload(d: dict):
    from .trends import TrendRow, TrendSeries
    out = {}
    for g, s in d["series"].items():
        rows = [TrendRow(tuple(r["year_month"]), r["n"], r["k"],
                         float("nan") if r["rolling"] is None else r["rolling"]) for r in s["rows"]]
        out[g] = TrendSeries(g, rows, s.get("meta", {}))
    return out


def _emit_trends(series, fmt: str, path: str | None, title: str = "") -> None:
    from .trends import series_to_csv, series_to_svg
    if fmt == "csv":
        _write_text(path, series_to_csv(series))
    elif fmt == "svg":
        _write_text(path, series_to_svg(series, title=title))
    else:
        _write_text(path, _dump_json(_trend_payload(series, title)))


def cmd_trends(args) -> int:
    from .corpus import load_corpus
    from .evalsim import load_predictions
    from .trends import GROUPINGS, monthly_series, rolling_mean

    fmt = _format_for(args.out, args.format, ("csv", "svg", "json"))
    docs = load_corpus(args.input)
    if args.predictions:
        preds = load_predictions(args.predictions)
        missing = [d.id for d in docs if d.id not in preds]
        if missing:
            raise ValueError(f"{len(missing)} documents have no prediction, e.g. {missing[0]}")
        labels = [preds[d.id][1] for d in docs]
    else:
        labels = [d.label for d in docs]
        if any(v is None for v in labels):
            raise ValueError("documents need labels or a --predictions file")
    if args.source:
        keep = [i for i, d in enumerate(docs) if d.source == args.source]
        docs, labels = [docs[i] for i in keep], [labels[i] for i in keep]
    if args.group in ("access", "china"):
        group_fn = GROUPINGS[args.group](rule=args.rule)
    else:
        group_fn = GROUPINGS[args.group]()
    series = {g: rolling_mean(s, args.window) for g, s in monthly_series(docs, labels, group_fn).items()}
    _emit_trends(series, fmt, args.out, title=args.title or f"predicted use by {args.group}")
    return 0


def cmd_regress(args) -> int:
    from .corpus import load_corpus
    from .econometrics import DesignOptions, build_design, fixed_effects, ols_cluster
    from .evalsim import load_predictions

    fmt = _format_for(args.out, args.format, ("text", "csv", "json"))
    docs = load_corpus(args.input)
    preds = None
    if args.predictions:
        preds = {k: v[1] for k, v in load_predictions(args.predictions).items()}
    periods = ["full", "clean"] if args.period == "both" else [args.period]
    results = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for period in periods:
            opts = DesignOptions(period=period, rule=args.rule, cluster=args.cluster, subset=args.subset,
                                 exclude_small_countries=args.exclude_small_countries,
                                 outcome=args.outcome, entity=args.entity)
            design = build_design(docs, args.spec, opts, predictions=preds)
            results.append(fixed_effects(design) if args.spec == "outcome_panel" else ols_cluster(design))
    for w in caught:
        log.warning("%s", w.message)
    _emit_regression(results, [p.capitalize() for p in periods], fmt, args.out)
    return 0


def _emit_regression(results, headers, fmt, path) -> None:
    from .econometrics import results_to_csv, star_table
    if fmt == "text":
        _write_text(path, star_table(results, headers))
    elif fmt == "csv":
        if len(results) == 1:
            _write_text(path, results_to_csv(results[0]))
        else:
            parts = []
            for h, r in zip(headers, results):
                body = results_to_csv(r).splitlines()
                if not parts:
                    parts.append("model," + body[0])
                parts.extend(f"{h}," + line for line in body[1:])
            _write_text(path, "\n".join(parts) + "\n")
    else:
        _write_text(path, _dump_json({"kind": "regression", "headers": headers,
                                      "results": [r.to_dict() for r in results]}))


def _regression_from_payload(d: dict):
    from .econometrics import Coefficient, RegressionResult

    def num(x):
        return float("nan") if x is None else x
    out = []
    for r in d["results"]:
        coefs = [Coefficient(c["name"], num(c["estimate"]), num(c["se"]), num(c["t"]), num(c["p"]),
                             c.get("identified", True)) for c in r["coefficients"]]
        out.append(RegressionResult(coefs, r["n"], r["n_groups"], num(r["r2"]), num(r["adj_r2"]),
                                    num(r["within_r2"]), num(r["resid_se"]), r["resid_df"], num(r["f_stat"]),
                                    tuple(r["f_df"]), r["kind"], r.get("meta", {})))
    return out


def cmd_report(args) -> int:
    """Re-render a saved JSON artifact as csv, json, text or svg."""
    from .evalsim import EvalReport

    try:
        data = json.loads(Path(args.input).read_text(encoding="utf-8"))
        kind = data["kind"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"{args.input}: not a saved report ({exc})") from None
    fmt = args.format
    if kind == "eval_report":
        report = EvalReport.from_dict(data)
        if fmt == "json":
            _write_text(args.out, report.to_json() + "\n")
        elif fmt == "csv":
            _write_text(args.out, report.to_csv())
        else:
            raise UsageError(f"an evaluation report cannot be rendered as {fmt}")
    elif kind == "trend_series":
        if fmt == "text":
            raise UsageError("trend series cannot be rendered as text")
        title = args.title if args.title is not None else data.get("title", "")
        _emit_trends(_trend_from_payload(data), fmt, args.out, title=title)
    elif kind == "regression":
        if fmt == "svg":
            raise UsageError("regression results cannot be rendered as svg")
        _emit_regression(_regression_from_payload(data), data.get("headers") or [], fmt, args.out)
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpdetect", description="Detect LLM-polished abstracts and analyse usage.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default=None, help=f"logging level (env {ENV_LOG_LEVEL}, default INFO)")
    p.add_argument("--jobs", type=int, default=None, help=f"worker threads (env {ENV_JOBS}, default 1)")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("ingest", help="validate a corpus and write it in canonical JSONL")
    s.add_argument("--in", dest="input")
    s.add_argument("--fixture", choices=["abstracts", "preprints"])
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("pair", help="polish originals into labeled training pairs")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--backend", choices=["stub", "http"], default="stub")
    s.add_argument("--endpoint", help=f"http backend URL (env {ENV_ENDPOINT})")
    s.add_argument("--timeout", type=float, default=60.0)
    s.add_argument("--prompts", help="prompt file, one prompt per line (default: bundled set)")
    s.add_argument("--keep-quotes", action="store_true", help="do not strip quotes around polished text")
    s.add_argument("--require-pre-launch", action="store_true")
    s.set_defaults(func=cmd_pair)

    s = sub.add_parser("train", help="train the four-model ensemble")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--test-fraction", type=float, default=0.0)
    s.add_argument("--held-out", help="where to write the held-out split")
    s.add_argument("--min-df", type=int, default=2)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="score documents with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("simulate", help="randomized-proportion evaluation")
    s.add_argument("--model")
    s.add_argument("--predictions", help="JSONL of {id, probability, label} from any detector")
    s.add_argument("--test", required=True)
    s.add_argument("--iters", type=int, default=10_000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--stratify", choices=["none", "access"], default="none")
    s.add_argument("--rule", choices=["all_authors", "first_author", "last_author"], default="all_authors")
    s.add_argument("--format", choices=["json", "csv"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fingerprint", help="document-frequency shifts or label-conditional usage")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--predictions")
    s.add_argument("--words", help="comma-separated words for label-conditional frequencies")
    s.add_argument("--top", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fingerprint)

    s = sub.add_parser("trends", help="monthly predicted-use series by group")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--predictions")
    s.add_argument("--group", choices=["all", "access", "china", "subject"], default="access")
    s.add_argument("--rule", choices=["all_authors", "first_author", "last_author"], default="all_authors")
    s.add_argument("--source", choices=["biorxiv", "arxiv", "elsevier", "synthetic"])
    s.add_argument("--window", type=int, default=4)
    s.add_argument("--title")
    s.add_argument("--format", choices=["csv", "svg", "json"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_trends)

    s = sub.add_parser("regress", help="access OLS or outcome fixed-effects regressions")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--predictions")
    s.add_argument("--spec", required=True,
                   choices=["access_biorxiv", "access_arxiv", "access_combined", "outcome_panel"])
    s.add_argument("--period", choices=["full", "clean", "both"], default="full")
    s.add_argument("--rule", choices=["all_authors", "first_author", "last_author"], default="all_authors")
    s.add_argument("--cluster", choices=["last", "first", "none"], default="last")
    s.add_argument("--subset", choices=["asian"])
    s.add_argument("--exclude-small-countries", action="store_true")
    s.add_argument("--outcome", default="views_pdf",
                   choices=["citations", "impact_factor", "views_abstract", "views_pdf", "views_full"])
    s.add_argument("--entity", choices=["last", "first"], default="last")
    s.add_argument("--format", choices=["text", "csv", "json"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_regress)

    s = sub.add_parser("report", help="re-render a saved JSON report")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--format", required=True, choices=["csv", "json", "text", "svg"])
    s.add_argument("--title")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        level = args.log_level or os.environ.get(ENV_LOG_LEVEL) or "INFO"
        if not isinstance(logging.getLevelName(level.upper()), int):
            raise UsageError(f"unknown log level {level!r}")
        logging.basicConfig(level=level.upper(), stream=sys.stderr, format="%(levelname)s %(message)s",
                            force=True)
        args.jobs = args.jobs if args.jobs is not None else _env_int(ENV_JOBS, 1)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fpdetect: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
