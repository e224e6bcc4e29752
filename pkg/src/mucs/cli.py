"""``mucs`` command line.

Every subcommand reads one JSON config, applies flag overrides, and writes its
outputs plus a ``manifest.json`` (resolved config, seed, tool version) into
``--out``. Exit codes: 0 success, 1 usage/config error, 2 partial data
failure, 3 transport exhaustion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from mucs import __version__
from mucs import detectors as det
from mucs import harness
from mucs.gateway import ResponseCache, entry_cost, load_prices
from mucs.mutation.smoothing import generate_mutants

log = logging.getLogger("mucs")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_TRANSPORT = 0, 1, 2, 3


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

def set_dotted(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {path}: {k} is not an object")
        cur = nxt
    cur[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_list(text: str, conv):
    return [conv(x.strip()) for x in text.split(",") if x.strip()]


def load_config(args) -> harness.ExperimentConfig:
    path = Path(args.config)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")

    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, value = item.split("=", 1)
        set_dotted(data, key.strip(), _parse_value(value))
    if args.seed is not None:
        data["seed"] = args.seed
        if isinstance(data.get("mucs"), dict):
            data["mucs"]["seed"] = args.seed
    if getattr(args, "budgets", None):
        data["budgets"] = _parse_list(args.budgets, float)
    if getattr(args, "methods", None):
        data["methods"] = _parse_list(args.methods, str)
    if getattr(args, "mucs", None) is True and data.get("mucs") is None:
        data["mucs"] = {}
    elif getattr(args, "mucs", None) is False:
        data["mucs"] = None
    # paths given on the command line are relative to the working directory
    if getattr(args, "offline_predictions", None):
        data["offline_predictions"] = str(Path(args.offline_predictions).resolve())
    if getattr(args, "stub", None):
        data["stub"] = str(Path(args.stub).resolve())
    try:
        return harness.ExperimentConfig.from_dict(data, base_dir=str(path.parent))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_manifest(out: Path, command: str, cfg, outputs, **extra):
    manifest = {
        "tool": "mucs",
        "version": __version__,
        "command": command,
        "seed": cfg.seed if cfg is not None else None,
        "config": cfg.to_dict() if cfg is not None else None,
        "outputs": sorted(outputs),
    }
    manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _context(cfg):
    template = cfg.template()
    items = harness.load_dataset(cfg.path("dataset"), template.class_names, template.kind)
    return template, items


def _sources(cfg, template, items, mucs, lexicon, gateway=None):
    logged = None
    if cfg.offline_predictions is not None:
        logged = harness.load_predictions(cfg.path("offline_predictions"), template.class_names)
    elif gateway is None:
        gateway = harness.build_gateway(cfg, template, items)
    return harness.gather_predictions(items, template, logged=logged, gateway=gateway, mucs=mucs,
                                      lexicon=lexicon), gateway


def _failure_code(failed, transport_failed):
    if transport_failed:
        return EXIT_TRANSPORT
    return EXIT_PARTIAL if failed else EXIT_OK


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_predict(args) -> int:
    cfg = load_config(args)
    cfg.validate()
    if cfg.offline_predictions is not None:
        raise ConfigError("predict needs an endpoint or a stub, not offline predictions")
    template, items = _context(cfg)
    mucs = cfg.mucs_config(template.kind)
    lexicon = cfg.load_lexicon() if mucs is not None else None
    src, gateway = _sources(cfg, template, items, mucs, lexicon)
    rows = []
    for it in items:
        if it.id not in src.original:
            continue
        row = {"id": it.id, "probs": src.original[it.id].to_list()}
        if mucs is not None:
            row["mutant_probs"] = [v.to_list() for v in src.mutants[it.id] or ()]
        rows.append(row)
    out = Path(args.out)
    harness.write_jsonl(out / "predictions.jsonl", rows)
    write_manifest(out, "predict", cfg, ["predictions.jsonl"], failures=src.failed,
                   transport_failures=src.transport_failed, fallbacks=src.fallbacks)
    stats = gateway.cache_stats()
    print(f"predicted {len(rows)}/{len(items)} items; cache hits={stats['hits']} misses={stats['misses']} "
          f"requests={gateway.transport_calls}")
    return _failure_code(src.failed, src.transport_failed)


def cmd_mutate(args) -> int:
    cfg = load_config(args)
    cfg.validate(require_source=False)
    template, items = _context(cfg)
    if cfg.mucs is None:
        cfg.mucs = {}
    mucs = cfg.mucs_config(template.kind)
    lexicon = cfg.load_lexicon()
    rows = [m.to_dict() for it in items for m in generate_mutants(it, mucs, lexicon)]
    out = Path(args.out)
    harness.write_jsonl(out / "mutants.jsonl", rows)
    write_manifest(out, "mutate", cfg, ["mutants.jsonl"])
    print(f"wrote {len(rows)} mutants for {len(items)} items")
    return EXIT_OK


def cmd_rank(args) -> int:
    cfg = load_config(args)
    cfg.validate()
    template, items = _context(cfg)
    mucs = cfg.mucs_config(template.kind)
    lexicon = cfg.load_lexicon() if mucs is not None else None
    src, gateway = _sources(cfg, template, items, mucs, lexicon)
    kept = [it for it in items if it.id in src.original]
    if mucs is not None:
        records = harness.smoothed_records(kept, src)
    else:
        records = harness.records_for(kept, src.original, "original")
    embeddings = harness.load_embeddings(cfg.path("embeddings")) if cfg.embeddings else None
    train = None
    if "testrank_lite" in cfg.methods:
        t_orig, t_smooth = harness.load_train(cfg, template, gateway, None, mucs, lexicon)
        train = t_smooth or t_orig
    mutant_sets = {it.id: det.MutantPredictionSet(it.id, tuple(src.mutants.get(it.id) or ())) for it in kept}
    rows = []
    for m in cfg.methods:
        try:
            ranking = det.run_detector(cfg.detector_config(m), records, embeddings=embeddings, train_records=train,
                                       mutant_sets=mutant_sets if mucs is not None else None)
            rows.append(ranking.to_dict())
        except det.PrerequisiteError as exc:
            rows.append({"method": m, "unavailable": str(exc)})
    out = Path(args.out)
    harness.write_jsonl(out / "rankings.jsonl", rows)
    write_manifest(out, "rank", cfg, ["rankings.jsonl"], failures=src.failed,
                   transport_failures=src.transport_failed, fallbacks=src.fallbacks)
    print(f"ranked {len(records)} items with {len(rows)} methods")
    return _failure_code(src.failed, src.transport_failed)


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    report = harness.run_experiment(cfg)
    out = Path(args.out)
    written = harness.save_report(report, out)
    write_manifest(out, "evaluate", cfg, [p.name for p in written], failures=report.excluded,
                   transport_failures=report.transport_failed, fallbacks=report.fallbacks)
    print(f"evaluated {report.n_items} items ({report.n_faults} faults); report in {out}")
    return _failure_code(report.excluded, report.transport_failed)


def cmd_compare(args) -> int:
    try:
        baseline = harness.load_report(args.baseline)
        treated = harness.load_report(args.treated)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    table = harness.compare_reports(baseline, treated)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "improvement.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(harness.improvement_csv(table))
    with open(out / "comparison.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "compare", None, ["improvement.csv", "comparison.json"],
                   baseline=str(args.baseline), treated=str(args.treated))
    print(harness.improvement_csv(table), end="")
    return EXIT_OK


def cmd_cache_stats(args) -> int:
    cfg = load_config(args)
    if cfg.cache is None:
        raise ConfigError("config has no cache path")
    cache = ResponseCache(cfg.path("cache"))
    prices = cfg.prices
    if isinstance(prices, str):
        p = Path(prices)
        prices = p if p.is_absolute() else Path(cfg.base_dir) / p
    prices = load_prices(prices)
    cost = sum(entry_cost(prices, e.model_name, e.prompt_tokens, e.completion_tokens) for e in cache.entries())
    stats = {"entries": len(cache), "hits": 0, "misses": 0, "estimated_cost": cost}
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mucs", description="LLM test input prioritization with mutation smoothing")
    p.add_argument("--version", action="version", version=f"mucs {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override a config field by dotted path; VALUE is parsed as JSON when possible")

    def run_flags(sp):
        sp.add_argument("--budgets", help="comma-separated fractions, e.g. 0.1,0.3,0.5")
        sp.add_argument("--methods", help=f"comma-separated subset of {','.join(det.METHODS)}")
        sp.add_argument("--mucs", action=argparse.BooleanOptionalAction, default=None,
                        help="enable or disable mutation smoothing")
        sp.add_argument("--offline-predictions", help="predictions JSON-lines file; no model queries")
        sp.add_argument("--stub", help="stub replies JSON-lines file used instead of the endpoint")

    sp = sub.add_parser("predict", help="query the model for every dataset item")
    common(sp, "out/predict")
    run_flags(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("mutate", help="write the mutant audit file")
    common(sp, "out/mutate")
    sp.set_defaults(func=cmd_mutate)

    sp = sub.add_parser("rank", help="rank items with every configured method")
    common(sp, "out/rank")
    run_flags(sp)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("evaluate", help="TRC grid, calibration and drift report")
    common(sp, "out/evaluate")
    run_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare", help="relative TRC change between two reports")
    sp.add_argument("baseline", help="baseline report directory or report.json")
    sp.add_argument("treated", help="treated report directory or report.json")
    sp.add_argument("--out", default="out/compare")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("cache-stats", help="summarize the response cache")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
    sp.set_defaults(func=cmd_cache_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, harness.DatasetError, harness.GridMismatch) as exc:
        print(f"mucs: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"mucs: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
