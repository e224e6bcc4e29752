"""Experiment orchestration: ingestion, detector grids, calibration and reports.

An experiment ranks a labeled test set with every requested detector, once on
the original predictions and, when smoothing is configured, once more on the
mutation-smoothed predictions (plus BALD on the mutant labels). Faults are
always the inputs the *original* prediction gets wrong.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mucs import detectors as det
from mucs.gateway import (
    Gateway,
    ModelEndpoint,
    PredictFailed,
    PromptTooLong,
    ResponseCache,
    StubTransport,
    TaskTemplate,
    TransportError,
    resolve_template,
)
from mucs.metrics import (
    DEFAULT_BINS,
    Budget,
    CalibrationSummary,
    PredictionRecord,
    ProbVector,
    TRCUndefined,
    TestItem,
    accuracy,
    summarize_calibration,
    trc,
)
from mucs.mutation.lexicon import Lexicon, default_lexicon
from mucs.mutation.smoothing import MucsConfig, mucs_smooth, smooth_vectors

log = logging.getLogger(__name__)

DEFAULT_BUDGETS = (0.10, 0.30, 0.50)
DEFAULT_METHODS = ("random", "gini", "entropy", "mcp", "maxp", "margin", "ats", "nns", "testrank_lite")
# column order of the result tables
TABLE_ORDER = ("random", "gini", "entropy", "mcp", "maxp", "margin", "ats", "nns", "testrank_lite", "bald")
UNAVAILABLE = "-"


class DatasetError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def _read_jsonl(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _resolve_label(value, class_names, where):
    if value is None:
        return None
    if isinstance(value, bool):
        raise DatasetError(f"{where}: label must be a class id or class name")
    if isinstance(value, int):
        if class_names is not None and not 0 <= value < len(class_names):
            raise DatasetError(f"{where}: label {value} out of range for {len(class_names)} classes")
        return value
    if isinstance(value, str) and class_names is not None:
        lookup = {n.lower(): i for i, n in enumerate(class_names)}
        if value.lower() in lookup:
            return lookup[value.lower()]
    if isinstance(value, str) and value.isdigit():
        return _resolve_label(int(value), class_names, where)
    raise DatasetError(f"{where}: unknown label {value!r}")


def load_dataset(path, class_names: Optional[Sequence[str]] = None, kind: Optional[str] = None) -> List[TestItem]:
    """Read a JSON-lines dataset of ``{id, prompt, label?, kind?}`` records."""
    items = []
    seen = set()
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        if "id" not in obj or obj["id"] in (None, ""):
            raise DatasetError(f"{where}: missing 'id'")
        if "prompt" not in obj or not isinstance(obj["prompt"], str):
            raise DatasetError(f"{where}: missing 'prompt'")
        item_id = str(obj["id"])
        if item_id in seen:
            raise DatasetError(f"{where}: duplicate id {item_id!r}")
        seen.add(item_id)
        label = _resolve_label(obj.get("label"), class_names, where)
        items.append(TestItem(item_id, obj["prompt"], obj.get("kind") or kind or "text", label))
    if not items:
        raise DatasetError(f"{path}: empty dataset")
    return items


def load_embeddings(path) -> Dict[str, np.ndarray]:
    out = {}
    dim = None
    for lineno, obj in _read_jsonl(path):
        vec = np.asarray(obj.get("vector", ()), dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise DatasetError(f"{path}:{lineno}: 'vector' must be a non-empty list of numbers")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DatasetError(f"{path}:{lineno}: vector has dimension {vec.size}, expected {dim}")
        out[str(obj["id"])] = vec
    return out


@dataclass
class LoggedPrediction:
    probs: ProbVector
    mutant_probs: Optional[List[ProbVector]] = None


def load_predictions(path, class_names: Optional[Sequence[str]] = None) -> Dict[str, LoggedPrediction]:
    """Read ``{id, probs, mutant_probs?}`` lines written by ``mucs predict`` or another tool."""
    names = tuple(class_names) if class_names else ()
    out = {}
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            probs = ProbVector(obj["probs"], names)
            mutants = None
            if obj.get("mutant_probs") is not None:
                mutants = [ProbVector(p, names) for p in obj["mutant_probs"]]
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{where}: {exc}") from exc
        out[str(obj["id"])] = LoggedPrediction(probs, mutants)
    return out


def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: str
    task: object = "sentiment"
    name: str = "experiment"
    endpoint: Optional[dict] = None
    offline_predictions: Optional[str] = None
    stub: Optional[str] = None
    methods: List[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    budgets: List[float] = field(default_factory=lambda: list(DEFAULT_BUDGETS))
    mucs: Optional[dict] = None
    seed: int = 0
    embeddings: Optional[str] = None
    train_dataset: Optional[str] = None
    train_predictions: Optional[str] = None
    cache: Optional[str] = None
    prices: object = None
    lexicon: Optional[str] = None
    nns_k: int = 5
    testrank_k: int = 10
    testrank_epochs: int = 200
    testrank_learning_rate: float = 0.5
    ece_bins: int = DEFAULT_BINS
    drift_threshold: float = 0.05
    base_dir: str = "."

    PATH_FIELDS = ("dataset", "offline_predictions", "stub", "embeddings", "train_dataset",
                   "train_predictions", "cache", "lexicon")

    def __post_init__(self):
        self.methods = [m.strip() for m in self.methods]
        self.budgets = [float(b) for b in self.budgets]

    def validate(self, require_source: bool = True):
        for m in self.methods:
            if m not in det.METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {', '.join(det.METHODS)}")
        if not self.budgets:
            raise ValueError("at least one budget is required")
        for b in self.budgets:
            if not 0.0 < b <= 1.0:
                raise ValueError(f"budget {b} outside (0, 1]")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise ValueError(f"budgets must be strictly increasing: {self.budgets}")
        if "bald" in self.methods and self.mucs is None:
            raise ValueError("bald needs mutation smoothing (mucs) to be configured")
        if require_source and self.offline_predictions is None and self.endpoint is None and self.stub is None:
            raise ValueError("need offline_predictions, an endpoint, or a stub")

    def path(self, name: str) -> Optional[Path]:
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            if k == "base_dir":
                continue
            out[k] = getattr(self, k)
        return out

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        d.setdefault("base_dir", str(base_dir))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data, base_dir=str(path.parent))

    def detector_config(self, method: str) -> det.DetectorConfig:
        return det.DetectorConfig(method=method, seed=self.seed, nns_k=self.nns_k, testrank_k=self.testrank_k,
                                  testrank_epochs=self.testrank_epochs,
                                  testrank_learning_rate=self.testrank_learning_rate)

    def template(self) -> TaskTemplate:
        return resolve_template(self.task)

    def mucs_config(self, kind: str) -> Optional[MucsConfig]:
        if self.mucs is None:
            return None
        d = dict(self.mucs)
        d.setdefault("seed", self.seed)
        return MucsConfig.from_dict(d, kind)

    def load_lexicon(self) -> Lexicon:
        p = self.path("lexicon")
        return Lexicon.load(p) if p else default_lexicon()


def load_stub(path, template: TaskTemplate, items: Sequence[TestItem] = ()) -> StubTransport:
    """Build a stub transport from ``{prompt|id, reply}`` lines plus an optional ``{default}`` line."""
    by_id = {it.id: it.prompt for it in items}
    table = {}
    default = None
    for lineno, obj in _read_jsonl(path):
        if "default" in obj:
            default = obj["default"]
            continue
        if "reply" not in obj:
            raise DatasetError(f"{path}:{lineno}: stub lines need 'reply'")
        if "prompt" in obj:
            prompt = obj["prompt"]
        elif str(obj.get("id")) in by_id:
            prompt = by_id[str(obj["id"])]
        else:
            raise DatasetError(f"{path}:{lineno}: stub line needs 'prompt' or a known 'id'")
        table[template.render(prompt)] = obj["reply"]
    return StubTransport(table, default=default)


def build_gateway(cfg: ExperimentConfig, template: TaskTemplate, items: Sequence[TestItem] = (),
                  transport=None) -> Gateway:
    if cfg.endpoint is not None:
        endpoint = ModelEndpoint.from_dict(cfg.endpoint)
    else:
        endpoint = ModelEndpoint(base_url="stub://", model_name="stub", backoff=0.0)
    if transport is None and cfg.stub is not None:
        transport = load_stub(cfg.path("stub"), template, items)
    cache = ResponseCache(cfg.path("cache")) if cfg.cache else ResponseCache()
    prices = cfg.prices
    if isinstance(prices, str):
        p = Path(prices)
        prices = p if p.is_absolute() else Path(cfg.base_dir) / p
    return Gateway(endpoint, transport=transport, cache=cache, prices=prices)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def display_name(method: str, smoothed: bool = False) -> str:
    name = det.DISPLAY_NAMES[method]
    return name + "-M" if smoothed and method != "bald" else name


def _mean_or_none(values):
    if not values or any(v is None for v in values):
        return None
    return float(np.mean(values))


@dataclass
class EvalReport:
    name: str
    budgets: List[str]
    budget_counts: List[int]
    n_items: int
    n_faults: int
    trc: Dict[str, Dict[str, Dict[str, Optional[float]]]]
    averages: Dict[str, Dict[str, Optional[float]]]
    calibration: Dict[str, Optional[dict]]
    accuracy: Dict[str, object]
    improvement: Optional[dict] = None
    unavailable: Dict[str, Dict[str, str]] = field(default_factory=dict)
    fallbacks: List[str] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)
    transport_failed: List[str] = field(default_factory=list)

    def grid(self, which: str = "original"):
        return self.trc.get(which)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "budgets": list(self.budgets),
            "budget_counts": list(self.budget_counts),
            "n_items": self.n_items,
            "n_faults": self.n_faults,
            "trc": self.trc,
            "averages": self.averages,
            "calibration": self.calibration,
            "accuracy": self.accuracy,
            "improvement": self.improvement,
            "unavailable": self.unavailable,
            "fallbacks": list(self.fallbacks),
            "excluded": list(self.excluded),
            "transport_failed": list(self.transport_failed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _fmt(v, digits=4):
    return UNAVAILABLE if v is None else f"{v:.{digits}f}"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trc_table_csv(report: EvalReport, which: str) -> str:
    grid = report.trc[which]
    methods = [m for m in TABLE_ORDER if m in grid]
    header = ["Budget"] + [display_name(m, which == "mucs") for m in methods]
    rows = [[b] + [_fmt(grid[m][b]) for m in methods] for b in report.budgets]
    rows.append(["Average"] + [_fmt(report.averages[which][m]) for m in methods])
    return _csv_text(header, rows)


def _fmt_change(cell):
    if cell is None:
        return UNAVAILABLE
    if cell["skipped"]:
        return "skipped"
    if cell["change_pct"] is None:
        return UNAVAILABLE
    if cell["direction"] == "flat":
        return "0.00%"
    return f"{cell['change_pct']:+.2f}%"


def improvement_csv(table: dict) -> str:
    methods = [m for m in TABLE_ORDER if m in table["cells"]]
    header = ["Budget"] + [display_name(m, True) for m in methods]
    rows = [[b] + [_fmt_change(table["cells"][m][b]) for m in methods] for b in table["budgets"]]
    for label, key in (("Average (per-budget)", "avg_relative_pct"), ("Average (ratio of averages)",
                                                                     "ratio_of_averages_pct")):
        row = [label]
        for m in methods:
            v = table["summary"][m][key]
            row.append(UNAVAILABLE if v is None else f"{v:+.2f}%")
        rows.append(row)
    return _csv_text(header, rows)


def calibration_csv(report: EvalReport) -> str:
    before = report.calibration["original"]
    after = report.calibration.get("smoothed")
    header = ["Model", "Confidence Before", "Confidence After", "ECE Before", "ECE After",
              "Diversity Before", "Diversity After"]

    def g(block, key, digits):
        return UNAVAILABLE if block is None else f"{block[key]:.{digits}f}"

    row = [report.name, g(before, "avg_confidence", 4), g(after, "avg_confidence", 4), g(before, "ece", 4),
           g(after, "ece", 4), g(before, "diversity", 2), g(after, "diversity", 2)]
    return _csv_text(header, [row])


def histogram_csv(report: EvalReport) -> str:
    before = report.calibration["original"]["histogram"]
    after = report.calibration.get("smoothed")
    after = after["histogram"] if after else None
    m = len(before)
    rows = []
    for i in range(m):
        rows.append([i + 1, f"{i / m:.6f}", f"{(i + 1) / m:.6f}", before[i],
                     UNAVAILABLE if after is None else after[i]])
    return _csv_text(["Interval", "Lower", "Upper", "Before", "After"], rows)


def save_report(report: EvalReport, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": report.to_json(),
        "trc_original.csv": trc_table_csv(report, "original"),
        "calibration.csv": calibration_csv(report),
        "histogram.csv": histogram_csv(report),
    }
    if report.trc.get("mucs") is not None:
        files["trc_mucs.csv"] = trc_table_csv(report, "mucs")
    if report.improvement is not None:
        files["improvement.csv"] = improvement_csv(report.improvement)
    written = []
    for name, text in files.items():
        p = out / name
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(p)
    return written


def load_report(path) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

def _relative(old, new):
    if old is None or new is None:
        return None, "n/a", False
    if old == 0:
        return None, "skipped", True
    change = (new - old) / old * 100.0
    if abs(change) < 1e-9:
        return 0.0, "flat", False
    return change, ("up" if change > 0 else "down"), False


def compare_grids(baseline: dict, treated: dict, budgets: Sequence[str]) -> dict:
    """Per-cell relative change from ``baseline`` to ``treated`` TRC grids.

    Methods present in only one grid are allowed only for ``random``
    (baseline-only) and ``bald`` (treated-only); anything else is a mismatch.
    """
    base_only = set(baseline) - set(treated) - {"random"}
    treated_only = set(treated) - set(baseline) - {"bald"}
    if base_only or treated_only:
        raise GridMismatch(f"method grids differ: baseline-only {sorted(base_only)}, "
                           f"treated-only {sorted(treated_only)}")
    common = [m for m in TABLE_ORDER if m in baseline and m in treated]
    if not common:
        raise GridMismatch("no methods in common")
    for m in common:
        if set(baseline[m]) != set(budgets) or set(treated[m]) != set(budgets):
            raise GridMismatch(f"budget columns differ for {m}")
    cells = {}
    summary = {}
    for m in common:
        cells[m] = {}
        rel = []
        for b in budgets:
            old, new = baseline[m][b], treated[m][b]
            change, direction, skipped = _relative(old, new)
            cells[m][b] = {"baseline": old, "treated": new, "change_pct": change, "direction": direction,
                           "skipped": skipped}
            if change is not None:
                rel.append(change)
        olds = [baseline[m][b] for b in budgets]
        news = [treated[m][b] for b in budgets]
        avg_old, avg_new = _mean_or_none(olds), _mean_or_none(news)
        ratio = None
        if avg_old is not None and avg_new is not None and avg_old != 0:
            ratio = (avg_new - avg_old) / avg_old * 100.0
        summary[m] = {
            "avg_relative_pct": float(np.mean(rel)) if rel else None,
            "ratio_of_averages_pct": ratio,
        }
    return {"budgets": list(budgets), "cells": cells, "summary": summary}


def compare_reports(baseline, treated) -> dict:
    """Relative TRC change of ``treated`` over ``baseline``.

    Reports are compared on the baseline's original grid against the
    treated report's smoothed grid when it has one, else its original grid.
    """
    if baseline.budgets != treated.budgets:
        raise GridMismatch(f"budgets differ: {baseline.budgets} vs {treated.budgets}")
    t_grid = treated.trc.get("mucs") or treated.trc["original"]
    return compare_grids(baseline.trc["original"], t_grid, baseline.budgets)


# --------------------------------------------------------------------------
# experiment
# --------------------------------------------------------------------------

@dataclass
class PredictionSources:
    original: Dict[str, ProbVector]
    mutants: Dict[str, Optional[List[ProbVector]]]
    fallbacks: List[str] = field(default_factory=list)
    failed: List[str] = field(default_factory=list)
    # subset of ``failed`` whose transport retries ran out
    transport_failed: List[str] = field(default_factory=list)


def gather_predictions(items: Sequence[TestItem], template: TaskTemplate, *, logged=None,
                       model_fn: Optional[Callable[[str], ProbVector]] = None,
                       gateway: Optional[Gateway] = None, mucs: Optional[MucsConfig] = None,
                       lexicon: Optional[Lexicon] = None) -> PredictionSources:
    """Collect original (and, with ``mucs``, mutant) predictions for ``items``.

    ``logged`` (offline prediction log) wins over ``model_fn``/``gateway``.
    """
    original: Dict[str, ProbVector] = {}
    mutants: Dict[str, Optional[List[ProbVector]]] = {}
    fallbacks, failed, transport_failed = [], [], []
    if logged is not None:
        for it in items:
            if it.id not in logged:
                raise DatasetError(f"no logged prediction for item {it.id}")
            original[it.id] = logged[it.id].probs
            mutants[it.id] = logged[it.id].mutant_probs
        if mucs is not None:
            missing = [it.id for it in items if not mutants[it.id]]
            if missing:
                raise DatasetError(f"offline predictions lack mutant_probs for {missing[:5]}")
        return PredictionSources(original, mutants)

    if model_fn is None:
        if gateway is None:
            raise ValueError("need logged predictions, a model function or a gateway")
        if len(items) > 1:
            answers = gateway.predict_many(template, [it.prompt for it in items], [it.id for it in items],
                                           return_errors=True)
        else:
            answers = []
            for it in items:
                try:
                    answers.append(gateway.predict(template, it.prompt, it.id))
                except (PredictFailed, TransportError, PromptTooLong) as exc:
                    answers.append(exc)
        model_fn = gateway.model_fn(template)
        workers = gateway.endpoint.max_in_flight
    else:
        answers = []
        for it in items:
            try:
                answers.append(model_fn(it.prompt))
            except Exception as exc:  # noqa: BLE001
                answers.append(exc)
        workers = 1
    for it, ans in zip(items, answers):
        if isinstance(ans, Exception):
            log.warning("item %s: prediction failed: %s", it.id, ans)
            failed.append(it.id)
            if isinstance(ans, TransportError):
                transport_failed.append(it.id)
            continue
        original[it.id] = ans
        mutants[it.id] = None

    if mucs is not None:
        for it in items:
            if it.id in failed:
                continue
            res = mucs_smooth(it, mucs, model_fn, lexicon=lexicon, original=original[it.id], max_workers=workers)
            mutants[it.id] = list(res.mutant_set.mutant_probs)
            if res.fallback:
                fallbacks.append(it.id)
    return PredictionSources(original, mutants, fallbacks, failed, transport_failed)


def records_for(items, probs_by_id, source):
    return [PredictionRecord(it.id, probs_by_id[it.id], source, it.true_label) for it in items if it.id in probs_by_id]


def smoothed_records(items, sources: PredictionSources):
    out = []
    for it in items:
        if it.id not in sources.original:
            continue
        vecs = sources.mutants.get(it.id)
        if vecs:
            out.append(PredictionRecord(it.id, smooth_vectors(vecs), "smoothed", it.true_label))
        else:
            out.append(PredictionRecord(it.id, sources.original[it.id], "original", it.true_label))
    return out


def _trc_row(ranking, fault_records, budget_counts, labels):
    return {lab: trc(ranking.top(bc), fault_records, bc) for lab, bc in zip(labels, budget_counts)}


def run_grid(methods, records, fault_records, cfg: ExperimentConfig, budget_counts, labels, *,
             embeddings=None, train_records=None, mutant_sets=None):
    """TRC for every method at every budget; unmet prerequisites give ``None`` cells."""
    grid, notes = {}, {}
    for m in methods:
        try:
            ranking = det.run_detector(cfg.detector_config(m), records, embeddings=embeddings,
                                       train_records=train_records, mutant_sets=mutant_sets)
        except det.PrerequisiteError as exc:
            log.info("%s unavailable: %s", m, exc)
            grid[m] = {lab: None for lab in labels}
            notes[m] = str(exc)
            continue
        try:
            grid[m] = _trc_row(ranking, fault_records, budget_counts, labels)
        except TRCUndefined as exc:
            grid[m] = {lab: None for lab in labels}
            notes[m] = str(exc)
    return grid, notes


def load_train(cfg, template, gateway, model_fn, mucs, lexicon):
    if cfg.train_dataset is None:
        return None, None
    items = load_dataset(cfg.path("train_dataset"), template.class_names, template.kind)
    logged = load_predictions(cfg.path("train_predictions"), template.class_names) if cfg.train_predictions else None
    if logged is None and gateway is None and model_fn is None:
        log.info("no predictions for the training split; testrank_lite unavailable")
        return None, None
    use_mucs = mucs
    if logged is not None and mucs is not None and not all(logged.get(it.id) and logged[it.id].mutant_probs
                                                            for it in items):
        use_mucs = None
    src = gather_predictions(items, template, logged=logged, model_fn=model_fn, gateway=gateway,
                             mucs=use_mucs, lexicon=lexicon)
    return records_for(items, src.original, "original"), smoothed_records(items, src) if use_mucs else None


def run_experiment(cfg: ExperimentConfig, *, gateway: Optional[Gateway] = None,
                   model_fn: Optional[Callable[[str], ProbVector]] = None) -> EvalReport:
    cfg.validate()
    template = cfg.template()
    items = load_dataset(cfg.path("dataset"), template.class_names, template.kind)
    unlabeled = [it.id for it in items if it.true_label is None]
    if unlabeled:
        raise DatasetError(f"evaluation needs labels; missing for {unlabeled[:5]}")
    mucs = cfg.mucs_config(template.kind)
    lexicon = cfg.load_lexicon() if mucs else None

    logged = None
    if cfg.offline_predictions is not None:
        logged = load_predictions(cfg.path("offline_predictions"), template.class_names)
    elif model_fn is None and gateway is None:
        gateway = build_gateway(cfg, template, items)

    sources = gather_predictions(items, template, logged=logged, model_fn=model_fn, gateway=gateway,
                                 mucs=mucs, lexicon=lexicon)
    kept = [it for it in items if it.id in sources.original]
    original = records_for(kept, sources.original, "original")
    n = len(original)
    budgets = [Budget(fraction=b) for b in cfg.budgets]
    labels = [b.label for b in budgets]
    counts = [b.resolve(n) for b in budgets]
    n_faults = sum(1 for r in original if r.is_fault)

    embeddings = load_embeddings(cfg.path("embeddings")) if cfg.embeddings else None
    train_orig = train_smooth = None
    if "testrank_lite" in cfg.methods:
        train_orig, train_smooth = load_train(cfg, template, gateway if logged is None else None,
                                               model_fn if logged is None else None, mucs, lexicon)

    base_methods = [m for m in cfg.methods if m != "bald"]
    grid_o, notes_o = run_grid(base_methods, original, original, cfg, counts, labels,
                               embeddings=embeddings, train_records=train_orig)
    trc_grids = {"original": grid_o, "mucs": None}
    unavailable = {"original": notes_o}
    averages = {"original": {m: _mean_or_none(list(grid_o[m].values())) for m in grid_o}, "mucs": None}

    calibration = {"original": summarize_calibration(original, cfg.ece_bins).to_dict(), "smoothed": None}
    acc = {"original": accuracy(original), "mutated": None, "drift": None, "drift_flag": None,
           "threshold": cfg.drift_threshold}
    improvement = None

    if mucs is not None:
        smoothed = smoothed_records(kept, sources)
        mutant_sets = {it.id: det.MutantPredictionSet(it.id, tuple(sources.mutants[it.id] or ()))
                       for it in kept}
        m_methods = [m for m in cfg.methods if m != "random"]
        grid_m, notes_m = run_grid([m for m in m_methods if m != "bald"], smoothed, original, cfg, counts, labels,
                                   embeddings=embeddings, train_records=train_smooth or train_orig)
        if "bald" in m_methods:
            g, nb = run_grid(["bald"], original, original, cfg, counts, labels, mutant_sets=mutant_sets)
            grid_m.update(g)
            notes_m.update(nb)
        trc_grids["mucs"] = grid_m
        unavailable["mucs"] = notes_m
        averages["mucs"] = {m: _mean_or_none(list(grid_m[m].values())) for m in grid_m}
        calibration["smoothed"] = summarize_calibration(smoothed, cfg.ece_bins).to_dict()

        correct = total = 0
        for it in kept:
            for v in sources.mutants[it.id] or ():
                total += 1
                correct += int(v.argmax() == it.true_label)
        if total:
            acc["mutated"] = correct / total
            acc["drift"] = abs(acc["original"] - acc["mutated"])
            acc["drift_flag"] = acc["drift"] > cfg.drift_threshold
            if acc["drift_flag"]:
                log.warning("accuracy on mutants drifts by %.3f (threshold %.3f)", acc["drift"], cfg.drift_threshold)
        improvement = compare_grids(grid_o, grid_m, labels)

    return EvalReport(
        name=cfg.name,
        budgets=labels,
        budget_counts=counts,
        n_items=n,
        n_faults=n_faults,
        trc=trc_grids,
        averages=averages,
        calibration=calibration,
        accuracy=acc,
        improvement=improvement,
        unavailable=unavailable,
        fallbacks=list(sources.fallbacks),
        excluded=list(sources.failed),
        transport_failed=list(sources.transport_failed),
    )


def calibration_summary(report: EvalReport, which: str = "original") -> Optional[CalibrationSummary]:
    block = report.calibration.get(which)
    return CalibrationSummary.from_dict(block) if block else None
