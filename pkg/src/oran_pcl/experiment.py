"""Scenario orchestration shared by the CLI and the HTTP service.

Output directory layout::

    dataset.csv                       generate
    models/index.json                 train (digest of the training inputs)
    models/<channel>/<kind>/<slice>_<cell>.json
    accuracy.csv, accuracy.json       train
    <mode>_report.csv, <mode>_totals.json, <mode>_audit.csv   run
    compare_totals.json, compare_plot.csv, compare.svg         compare
    manifest.json                     every command
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .atomic import atomic_write_text
from .errors import ConfigError, PclError
from .forecast import (
    ForecastModel,
    accuracy,
    fit_arima,
    load_model,
    one_step_predictions,
    save_model,
    seasonal_naive,
    train_lstm_many,
)
from .kpi import CHANNELS, SliceCubes, aggregate_cubes
from .plots import render_compare_svg
from .scenario import ScenarioConfig
from .sim import LoopComponents, RunReport, prb_coefficients, read_report_csv, run_dynamic, run_static
from .traffic import CellId, Dataset, generate_synthetic_dataset, load_dataset, split_train_test, write_dataset

KINDS = ("lstm", "arima", "seasonal_naive")
PLOT_HEADER = (
    "hour",
    "actual",
    "static_limit",
    "dynamic_limit",
    "static_under",
    "static_over",
    "dynamic_under",
    "dynamic_over",
    "static_cum_non_optimal",
    "dynamic_cum_non_optimal",
)


class PrerequisiteError(PclError):
    """An input another subcommand produces is missing."""


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out: Path, scenario: ScenarioConfig, command: str, files: dict[str, str]) -> None:
    """Merge this command's outputs into ``manifest.json``; no timestamps, so reruns are byte-identical."""
    path = out / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("config_digest") != scenario.digest():
            doc = {}
    except (FileNotFoundError, json.JSONDecodeError):
        doc = {}
    doc.update(
        {
            "tool": "oran-pcl",
            "config_digest": scenario.digest(),
            "seed": scenario.seed,
            "versions": {
                "oran_pcl": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
    )
    commands = doc.setdefault("commands", {})
    commands[command] = {name: _sha256(text) for name, text in sorted(files.items())}
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write(out: Path, files: dict[str, str]) -> None:
    for name, text in files.items():
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(target, text)


# -- dataset ------------------------------------------------------------------


def build_dataset(scenario: ScenarioConfig) -> Dataset:
    if scenario.dataset.generator is not None:
        return generate_synthetic_dataset(scenario.generator_config())
    path = Path(scenario.dataset.csv)
    if not path.exists():
        raise PrerequisiteError(f"dataset file {path} does not exist; produce it with `generate` or fix dataset.csv in the config")
    return load_dataset(path)


def cmd_generate(scenario: ScenarioConfig, out: Path) -> Path:
    if scenario.dataset.generator is None:
        raise ConfigError("`generate` needs a dataset.generator section; this scenario reads a CSV")
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(scenario)
    target = out / "dataset.csv"
    write_dataset(dataset, target)
    write_manifest(out, scenario, "generate", {"dataset.csv": target.read_text(encoding="utf-8")})
    return target


# -- training -----------------------------------------------------------------


@dataclass
class Prepared:
    dataset: Dataset
    train: Dataset
    test: Dataset
    cubes: SliceCubes

    @property
    def n_train(self) -> int:
        return self.train.hours

    def keys(self) -> list[tuple[str, CellId]]:
        return [(s, c) for s in self.cubes.slice_ids for c in self.cubes.cells]

    def series(self, channel: str) -> list[np.ndarray]:
        arr = self.cubes.channel(channel)
        return [arr[s, :, c] for s in range(len(self.cubes.slice_ids)) for c in range(len(self.cubes.cells))]


def prepare(scenario: ScenarioConfig) -> Prepared:
    dataset = build_dataset(scenario)
    train, test = split_train_test(dataset, scenario.train_fraction)
    return Prepared(dataset, train, test, aggregate_cubes(dataset, scenario.mapping, scenario.allocator))


def _series_name(key, channel):
    return f"{key[0]}/{key[1].name}/{channel}"


def train_models(scenario: ScenarioConfig, prep: Prepared, kind: str, channel: str) -> dict:
    """Fit one model of ``kind`` per (slice, cell) on the training hours of ``channel``."""
    keys = prep.keys()
    train_series = [s[: prep.n_train] for s in prep.series(channel)]
    names = [_series_name(k, channel) for k in keys]
    if kind == "lstm":
        models = train_lstm_many(train_series, scenario.lstm_config(), names)
    elif kind == "arima":
        orders = scenario.arima_orders()
        models = [fit_arima(s, orders, n) for s, n in zip(train_series, names)]
    else:
        models = [seasonal_naive(s, scenario.forecaster.season, n) for s, n in zip(train_series, names)]
    return dict(zip(keys, models))


def _model_path(channel, kind, key) -> str:
    return f"models/{channel}/{kind}/{key[0]}_{key[1].name}.json"


def _training_digest(scenario: ScenarioConfig) -> str:
    doc = scenario.model_dump(mode="json")
    relevant = {k: doc[k] for k in ("seed", "dataset", "slices", "allocator", "forecaster", "train_fraction")}
    return _sha256(json.dumps(relevant, sort_keys=True))


def _score(model: ForecastModel, series: np.ndarray, n_train: int, start: int, tol: float):
    train_pred = one_step_predictions(model, series[:n_train], start)
    test_pred = one_step_predictions(model, series, n_train)
    return (
        accuracy(train_pred, series[start:n_train], series, tol),
        accuracy(test_pred, series[n_train:], series, tol),
    )


def accuracy_table(scenario: ScenarioConfig, prep: Prepared, trained: dict) -> list[dict]:
    """Per channel and model kind: mean train/test accuracy over every (slice, cell) series."""
    rows = []
    for channel in sorted({c for c, _ in trained}, key=CHANNELS.index):
        kinds = [k for k in KINDS if (channel, k) in trained]
        all_series = prep.series(channel)
        for kind in kinds:
            train_acc, test_acc, detail = [], [], []
            for key, series in zip(prep.keys(), all_series):
                # common start so every kind is scored on the same training hours
                start = max(trained[(channel, k)][key].required_window for k in kinds)
                tr, te = _score(trained[(channel, kind)][key], series, prep.n_train, start, scenario.tolerance_frac)
                train_acc.append(tr.accuracy_pct)
                test_acc.append(te.accuracy_pct)
                detail.append({"series": _series_name(key, channel), "train": tr.as_dict(), "test": te.as_dict()})
            rows.append(
                {
                    "channel": channel,
                    "model": kind,
                    "train_accuracy_pct": float(np.mean(train_acc)),
                    "test_accuracy_pct": float(np.mean(test_acc)),
                    "test_min_pct": float(np.min(test_acc)),
                    "test_max_pct": float(np.max(test_acc)),
                    "n_series": len(test_acc),
                    "series": detail,
                }
            )
    return rows


def format_accuracy_table(rows: list[dict]) -> str:
    lines = [f"{'channel':<14} {'model':<15} {'train %':>8} {'test %':>8} {'test min':>9} {'test max':>9}"]
    for r in rows:
        lines.append(
            f"{r['channel']:<14} {r['model']:<15} {r['train_accuracy_pct']:>8.2f} {r['test_accuracy_pct']:>8.2f}"
            f" {r['test_min_pct']:>9.2f} {r['test_max_pct']:>9.2f}"
        )
    return "\n".join(lines)


def _accuracy_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("channel", "model", "train_accuracy_pct", "test_accuracy_pct", "test_min_pct", "test_max_pct", "n_series"))
    for r in rows:
        w.writerow(
            (r["channel"], r["model"], repr(r["train_accuracy_pct"]), repr(r["test_accuracy_pct"]), repr(r["test_min_pct"]), repr(r["test_max_pct"]), r["n_series"])
        )
    return buf.getvalue()


@dataclass
class TrainResult:
    models: dict
    table: list[dict]
    files: dict[str, str]


def cmd_train(scenario: ScenarioConfig, out: Path, prep: Prepared | None = None) -> TrainResult:
    """Train the configured forecaster (plus baselines) for every configured channel."""
    prep = prep or prepare(scenario)
    kinds = KINDS if scenario.forecaster.baselines else (scenario.forecaster.kind,)
    trained = {}
    for channel in scenario.forecaster.channels:
        for kind in kinds:
            trained[(channel, kind)] = train_models(scenario, prep, kind, channel)
    table = accuracy_table(scenario, prep, trained)
    files = _persist_models(scenario, out, trained)
    files["accuracy.csv"] = _accuracy_csv(table)
    files["accuracy.json"] = json.dumps(table, indent=2, sort_keys=True) + "\n"
    _write(out, {k: v for k, v in files.items() if k.startswith("accuracy")})
    write_manifest(out, scenario, "train", files)
    return TrainResult(trained, table, files)


def _persist_models(scenario, out: Path, trained: dict) -> dict[str, str]:
    from .forecast.model import dumps_model

    files = {}
    index = {"digest": _training_digest(scenario), "models": {}}
    for (channel, kind), models in sorted(trained.items()):
        for key, model in models.items():
            rel = _model_path(channel, kind, key)
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            save_model(model, target)
            files[rel] = dumps_model(model) + "\n"
            index["models"].setdefault(f"{channel}/{kind}", []).append(rel)
    index_text = json.dumps(index, indent=2, sort_keys=True) + "\n"
    (out / "models").mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "models" / "index.json", index_text)
    files["models/index.json"] = index_text
    return files


def load_or_train(scenario: ScenarioConfig, out: Path, prep: Prepared) -> dict:
    """Active-UE models of the configured kind, reloaded when trained from the same inputs."""
    kind, channel = scenario.forecaster.kind, "active_ues"
    try:
        index = json.loads((out / "models" / "index.json").read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError):
        index = None
    if index and index.get("digest") == _training_digest(scenario) and f"{channel}/{kind}" in index["models"]:
        try:
            return {key: load_model(out / _model_path(channel, kind, key)) for key in prep.keys()}
        except (FileNotFoundError, ConfigError):
            pass
    return train_models(scenario, prep, kind, channel)


# -- runs ---------------------------------------------------------------------


def execute_run(scenario: ScenarioConfig, out: Path, mode: str, prep: Prepared | None = None) -> RunReport:
    if mode not in ("static", "dynamic"):
        raise ConfigError(f"unknown run mode {mode!r}")
    prep = prep or prepare(scenario)
    mapping = scenario.mapping
    train_cubes = aggregate_cubes(prep.train, mapping, scenario.allocator)
    loop_cfg = scenario.loop_config(prb_coefficients(train_cubes))
    if mode == "static":
        return run_static(prep.train, prep.test, scenario.static_limits, mapping, scenario.allocator, loop_cfg)
    models = load_or_train(scenario, out, prep)
    components = LoopComponents(models, loop_cfg, scenario.feedback)
    return run_dynamic(prep.train, prep.test, components, scenario.static_limits, mapping, scenario.allocator)


def cmd_run(scenario: ScenarioConfig, out: Path, mode: str) -> RunReport:
    out.mkdir(parents=True, exist_ok=True)
    report = execute_run(scenario, out, mode)
    files = report.write(out)
    write_manifest(out, scenario, f"run-{mode}", files)
    return report


def plot_rows(static_csv: str, dynamic_csv: str, slice_id: str) -> list[tuple]:
    """Four-panel series for one slice, summed over cells, projected from the two report CSVs."""
    per_hour: dict[int, dict] = {}
    for mode, text in (("static", static_csv), ("dynamic", dynamic_csv)):
        for r in read_report_csv(text):
            if r["slice"] != slice_id:
                continue
            h = per_hour.setdefault(r["hour"], {})
            h.setdefault(f"{mode}_actual", 0)
            h[f"{mode}_actual"] += r["actual"]
            for col in ("limit", "under", "over", "non_optimal"):
                h[f"{mode}_{col}"] = h.get(f"{mode}_{col}", 0) + r[col]
    rows, cum = [], {"static": 0, "dynamic": 0}
    for hour in sorted(per_hour):
        h = per_hour[hour]
        if h.get("static_actual") != h.get("dynamic_actual"):
            raise PclError(f"hour {hour}: static and dynamic reports disagree on actual demand")
        for mode in cum:
            cum[mode] += h[f"{mode}_non_optimal"]
        rows.append(
            (
                hour,
                h["static_actual"],
                h["static_limit"],
                h["dynamic_limit"],
                h["static_under"],
                h["static_over"],
                h["dynamic_under"],
                h["dynamic_over"],
                cum["static"],
                cum["dynamic"],
            )
        )
    return rows


@dataclass
class CompareResult:
    static: RunReport
    dynamic: RunReport
    totals: dict
    files: dict[str, str]


def cmd_compare(scenario: ScenarioConfig, out: Path) -> CompareResult:
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(scenario)
    static = execute_run(scenario, out, "static", prep)
    dynamic = execute_run(scenario, out, "dynamic", prep)
    files = {}
    files.update(static.write(out))
    files.update(dynamic.write(out))
    s_tot, d_tot = static.totals(), dynamic.totals()
    s_no, d_no = s_tot["total"]["non_optimal"], d_tot["total"]["non_optimal"]
    totals = {
        "static": s_tot,
        "dynamic": d_tot,
        "ratio": (d_no / s_no) if s_no else None,
        "dynamic_below_static": d_no < s_no,
    }
    focus = scenario.mapping.slice_ids[0]
    rows = plot_rows(files["static_report.csv"], files["dynamic_report.csv"], focus)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_HEADER)
    w.writerows(rows)
    files["compare_totals.json"] = json.dumps(totals, indent=2, sort_keys=True) + "\n"
    files["compare_plot.csv"] = buf.getvalue()
    files["compare.svg"] = render_compare_svg(PLOT_HEADER, rows, f"slice {focus}")
    _write(out, {k: files[k] for k in ("compare_totals.json", "compare_plot.csv", "compare.svg")})
    write_manifest(out, scenario, "compare", files)
    return CompareResult(static, dynamic, totals, files)
