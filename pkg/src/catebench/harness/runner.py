"""Experiment execution: draws, tasks, seeds and result files.

Every (setting, draw, estimator, repetition) combination is one task.  Draws
are generated once in the parent process; workers receive them through
``fork`` and only read them.  Seeds are derived from the master seed and the
task coordinates, so results do not depend on the worker count or on the
order in which tasks complete.

Result files written to the output directory:

* ``records.csv``: one row per task, canonical order, 17 significant digits.
* ``predictions.csv``: true and estimated effect for every test unit.
* ``timings.csv``: wall-clock fit times (kept apart so the records file is
  reproducible byte for byte).
* ``manifest.json``: resolved config, master seed and per-draw diagnostics.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..data import CovariateMatrix, SimulationDraw, ihdp_assignment
from ..dgp.ihdp import IhdpConfig, generate_ihdp_draw
from ..dgp.knobbed import default_split, generate_knobbed_draw
from ..metrics import RunRecord, normalized_rmse, rmse_cate, sigma_of
from ..seeding import derive_seed
from ..strategies import fit_estimator, predict_cate
from .config import ExperimentConfig, SettingConfig

log = logging.getLogger(__name__)

# second seed component: which stream a seed feeds
_COVARIATES, _ASSIGNMENT, _SPLIT, _DRAW, _TASK = range(5)

RECORD_FIELDS = [f.name for f in fields(RunRecord)]
PREDICTION_FIELDS = ["setting_name", "draw_id", "repetition", "estimator_name", "unit", "tau_true", "tau_hat"]
TIMING_FIELDS = ["setting_name", "draw_id", "repetition", "estimator_name", "fit_seconds"]


class TaskId(NamedTuple):
    setting: int
    draw: int
    estimator: int
    repetition: int


@dataclass
class TaskResult:
    task: TaskId
    record: RunRecord
    tau_hat: np.ndarray | None
    fit_seconds: float


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _stream(config: ExperimentConfig, s: int) -> int:
    setting = config.settings[s]
    return setting.data_stream if setting.data_stream is not None else s


def task_seed(config: ExperimentConfig, task: TaskId) -> int:
    return derive_seed(config.master_seed, [task.setting, _TASK, task.draw, task.estimator, task.repetition])


def draw_seed(config: ExperimentConfig, s: int, draw: int) -> int:
    return derive_seed(config.master_seed, [_stream(config, s), _DRAW, draw])


def setting_covariates(config: ExperimentConfig, s: int, base_dir: Path | None = None) -> CovariateMatrix:
    seed = derive_seed(config.master_seed, [_stream(config, s), _COVARIATES])
    return config.settings[s].covariates.load(seed, base_dir)


def generate_setting_draws(config: ExperimentConfig, s: int,
                           base_dir: Path | None = None) -> list[SimulationDraw]:
    """All draws of setting ``s``, with estimator inputs already applied."""
    setting = config.settings[s]
    stream = _stream(config, s)
    X = setting_covariates(config, s, base_dir)
    dgp = setting.dgp_config()
    split = setting.split.build(X.n, derive_seed(config.master_seed, [stream, _SPLIT]))
    draws = []
    if setting.dgp == "ihdp":
        assert isinstance(dgp, IhdpConfig)
        W, e = ihdp_assignment(X, derive_seed(config.master_seed, [stream, _ASSIGNMENT]))
        for k in range(setting.n_draws):
            draws.append(generate_ihdp_draw(X, W, dgp, draw_seed(config, s, k), split, e))
    else:
        if setting.split.kind == "prefix" and setting.split.n_train is None:
            split = default_split(X.n, dgp)
        for k in range(setting.n_draws):
            draws.append(generate_knobbed_draw(X, dgp, draw_seed(config, s, k), split))
    if setting.estimator_inputs == "transformed":
        draws = [replace(d, covariates=d.design if d.design is not None else d.covariates, design=None)
                 for d in draws]
    return draws


# Set in the parent before workers fork; read-only afterwards.
_STATE: dict = {}


def _run_task(task: TaskId) -> TaskResult:
    config: ExperimentConfig = _STATE["config"]
    draw: SimulationDraw = _STATE["draws"][task.setting][task.draw]
    setting = config.settings[task.setting]
    entry = config.estimators[task.estimator]
    seed = task_seed(config, task)
    test = draw.test
    tau_true = draw.tau[test]
    sigma_tau = sigma_of(tau_true)
    base = dict(setting_name=setting.name, draw_id=task.draw, repetition=task.repetition,
                estimator_name=entry.display, sigma_tau=sigma_tau, sigma_mu0=sigma_of(draw.mu0[test]),
                n_test=int(test.size), draw_seed=int(draw.draw_seed), task_seed=int(seed))
    start = time.perf_counter()
    try:
        model = fit_estimator(draw, entry.spec(config.preset).with_seed(seed))
        tau_hat = np.asarray(predict_cate(model, draw.covariates.values[test]), dtype=float)
        if not np.all(np.isfinite(tau_hat)):
            raise FloatingPointError("non-finite effect predictions")
    except Exception as exc:  # recorded, not raised: one failed fit must not sink the run
        elapsed = time.perf_counter() - start
        log.warning("task %s failed: %s", task, exc)
        record = RunRecord(status="error", error=f"{type(exc).__name__}: {exc}", **base)
        return TaskResult(task, record, None, elapsed)
    elapsed = time.perf_counter() - start
    rmse = rmse_cate(tau_hat, tau_true)
    record = RunRecord(rmse=rmse, nrmse=normalized_rmse(rmse, sigma_tau), **base)
    return TaskResult(task, record, tau_hat, elapsed)


def _warm_up() -> None:
    """Compile the forest kernels once so forked workers inherit them."""
    from ..learners.forest import ForestParams, fit_forest, predict_forest

    x = np.arange(40, dtype=float).reshape(20, 2)
    y = x[:, 0].copy()
    model = fit_forest(x, y, params=ForestParams(n_trees=1, min_leaf=2))
    predict_forest(model, x)
    w = np.tile([0, 1], 10)
    fit_forest(x, y, params=ForestParams(n_trees=1, min_leaf=2),
               treatment_residual=w - 0.5, treatment=w)


def task_list(config: ExperimentConfig) -> list[TaskId]:
    return [TaskId(s, d, e, r)
            for s, setting in enumerate(config.settings)
            for d in range(setting.n_draws)
            for e in range(len(config.estimators))
            for r in range(config.repetitions_of(e))]


def write_records(path: str | Path, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])


def _parse(field_type, text: str):
    if text == "":
        return None if field_type != "str" else ""
    if field_type == "int":
        return int(text)
    if field_type == "float":
        return float(text)
    return text


def read_records(path: str | Path) -> list[RunRecord]:
    types = {}
    for f in fields(RunRecord):
        t = str(f.type)
        types[f.name] = "int" if t.startswith("int") else "float" if t.startswith("float") else "str"
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_FIELDS:
            raise ValueError(f"{path}: header {reader.fieldnames} does not match {RECORD_FIELDS}")
        rows = [RunRecord(**{k: _parse(types[k], v) for k, v in row.items()}) for row in reader]
    return rows


def read_predictions(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("draw_id", "repetition", "unit"):
            row[k] = int(row[k])
        for k in ("tau_true", "tau_hat"):
            row[k] = float(row[k])
    return rows


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1,
                   base_dir: Path | None = None) -> Path:
    """Run every task of ``config`` and write the result files; returns the records path."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    draws = [generate_setting_draws(config, s, base_dir) for s in range(len(config.settings))]
    diagnostics = {}
    for setting, per in zip(config.settings, draws):
        diagnostics[setting.name] = [
            {"draw_id": k, "draw_seed": int(d.draw_seed),
             **{key: v for key, v in d.diagnostics.items() if isinstance(v, (int, float, str))}}
            for k, d in enumerate(per)]
        regen = sum(int(d.diagnostics.get("regenerations", 0)) for d in per)
        if regen:
            log.info("setting %s: %d coefficient regenerations after exp overflow", setting.name, regen)

    tasks = task_list(config)
    _STATE.update(config=config, draws=draws)
    try:
        _warm_up()
        if workers <= 1:
            results = [_run_task(t) for t in tasks]
        else:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    finally:
        _STATE.clear()
    results.sort(key=lambda r: r.task)

    records_path = out / "records.csv"
    write_records(records_path, [r.record for r in results])
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        for r in results:
            if r.tau_hat is None:
                continue
            draw = draws[r.task.setting][r.task.draw]
            for unit, true, hat in zip(draw.test, draw.tau[draw.test], r.tau_hat):
                w.writerow([r.record.setting_name, r.task.draw, r.task.repetition,
                            r.record.estimator_name, int(unit), _fmt(float(true)), _fmt(float(hat))])
    with (out / "timings.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_FIELDS)
        for r in results:
            w.writerow([r.record.setting_name, r.task.draw, r.task.repetition, r.record.estimator_name,
                        "%.6f" % r.fit_seconds])
    manifest = {
        "config": config.to_dict(),
        "master_seed": config.master_seed,
        "preset": config.preset,
        "n_tasks": len(tasks),
        "n_errors": sum(not r.record.ok for r in results),
        "settings": {s.name: {"dgp": s.dgp, "estimator_inputs": s.estimator_inputs,
                              "data_stream": _stream(config, i)}
                     for i, s in enumerate(config.settings)},
        "draws": diagnostics,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return records_path
