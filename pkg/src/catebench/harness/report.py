"""Tables and plot-data files computed from a finished run.

Everything here is recomputed from ``records.csv`` (plus ``predictions.csv``
for effect dumps and ``manifest.json`` for pairing raw and transformed
settings); nothing is carried over from the run itself.  Files written:

``aggregate.csv``       mean / stderr / median RMSE per setting and estimator
``aggregate_nrmse.csv`` the same for RMSE normalized by sigma_tau
``sigma_bins.csv``      RMSE aggregated within sigma_tau bins
``scatter.csv``         per-draw RMSE against sigma_tau
``histogram.csv``       RMSE histograms per setting and estimator
``percentile_runs.csv`` draws at chosen sigma_tau percentiles
``percentile_cate.csv`` true and estimated effects on those draws
``comparison.csv``      raw versus transformed inputs, when such pairs exist
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metrics import AggregateRow, aggregate, draw_means, histogram, percentile_runs, sigma_bins
from .runner import read_predictions, read_records


@dataclass(frozen=True)
class ReportSpec:
    sigma_edges: tuple[float, ...] = (0.0, 1.0, 2.5, 5.0, 10.0, math.inf)
    percentiles: tuple[float, ...] = (10.0, 50.0, 90.0)
    histogram_bins: int = 20


def _f(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _write(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) for v in row])
    return path


AGG_HEADER = ["group", "estimator_name", "mean", "stderr", "median", "mean_median_ratio",
              "heavy_tail", "n_runs", "n_errors"]


def _agg_rows(rows: list[AggregateRow]):
    for r in rows:
        yield [r.group, r.estimator_name, r.mean_rmse, r.stderr_rmse, r.median_rmse,
               r.mean_median_ratio, r.heavy_tail, r.n_runs, r.n_errors]


def comparison_rows(records, manifest: dict) -> list[list]:
    """Raw-vs-transformed rows for settings that share a data stream."""
    settings = manifest.get("settings", {})
    means, _ = draw_means(records, "setting")
    out = []
    for raw_name, raw in sorted(settings.items()):
        if raw["estimator_inputs"] != "raw":
            continue
        for tr_name, tr in sorted(settings.items()):
            if tr["estimator_inputs"] != "transformed" or tr["data_stream"] != raw["data_stream"]:
                continue
            estimators = sorted({e for g, e in means if g == raw_name} & {e for g, e in means if g == tr_name})
            for est in estimators:
                a, b = means[(raw_name, est)], means[(tr_name, est)]
                common = sorted(set(a) & set(b))
                if not common:
                    continue
                raw_mean = float(np.mean([a[d] for d in common]))
                tr_mean = float(np.mean([b[d] for d in common]))
                out.append([raw_name, tr_name, est, raw_mean, tr_mean,
                            (tr_mean - raw_mean) / raw_mean if raw_mean > 0 else math.nan, len(common)])
    return out


def report(records_path: str | Path, spec: ReportSpec = ReportSpec(),
           out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write every report file next to ``records_path`` (or into ``out_dir``)."""
    records_path = Path(records_path)
    run_dir = records_path.parent
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    records = read_records(records_path)
    if not records:
        raise ValueError(f"{records_path}: no records")
    paths: dict[str, Path] = {}

    paths["aggregate"] = _write(out / "aggregate.csv", AGG_HEADER, _agg_rows(aggregate(records, "setting")))
    paths["aggregate_nrmse"] = _write(out / "aggregate_nrmse.csv", AGG_HEADER,
                                      _agg_rows(aggregate(records, "setting", value="nrmse")))
    ok = [r for r in records if r.ok]
    paths["sigma_bins"] = _write(out / "sigma_bins.csv", AGG_HEADER,
                                 _agg_rows(aggregate(ok, sigma_bins(spec.sigma_edges))))

    means, _ = draw_means(records, "setting")
    sigma = {(r.setting_name, r.draw_id): r.sigma_tau for r in records}
    scatter = [[g, est, d, sigma[(g, d)], v]
               for (g, est), per in sorted(means.items()) for d, v in per.items()]
    paths["scatter"] = _write(out / "scatter.csv",
                              ["setting_name", "estimator_name", "draw_id", "sigma_tau", "rmse"], scatter)

    hist = []
    for (g, est), per in sorted(means.items()):
        edges, counts = histogram(list(per.values()), bins=spec.histogram_bins)
        hist += [[g, est, edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)]
    paths["histogram"] = _write(out / "histogram.csv",
                                ["setting_name", "estimator_name", "bin_lo", "bin_hi", "count"], hist)

    selected = []
    for g in sorted({r.setting_name for r in records}):
        per = [r for r in records if r.setting_name == g]
        for p, d in zip(spec.percentiles, percentile_runs(per, "sigma_tau", spec.percentiles)):
            selected.append([g, p, d, sigma[(g, d)]])
    paths["percentile_runs"] = _write(out / "percentile_runs.csv",
                                      ["setting_name", "percentile", "draw_id", "sigma_tau"], selected)

    pred_path = run_dir / "predictions.csv"
    if pred_path.exists():
        wanted = {(g, d): p for g, p, d, _ in selected}
        rows = []
        for row in read_predictions(pred_path):
            p = wanted.get((row["setting_name"], row["draw_id"]))
            if p is not None:
                rows.append([row["setting_name"], p, row["draw_id"], row["estimator_name"], row["repetition"],
                             row["unit"], row["tau_true"], row["tau_hat"]])
        paths["percentile_cate"] = _write(
            out / "percentile_cate.csv",
            ["setting_name", "percentile", "draw_id", "estimator_name", "repetition", "unit", "tau_true",
             "tau_hat"], rows)

    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        rows = comparison_rows(records, json.loads(manifest_path.read_text()))
        if rows:
            paths["comparison"] = _write(
                out / "comparison.csv",
                ["raw_setting", "transformed_setting", "estimator_name", "raw_mean", "transformed_mean",
                 "relative_change", "n_draws"], rows)
    return paths


def format_table(rows: list[AggregateRow]) -> str:
    """Plain-text aggregate table for the terminal."""
    lines = [f"{'group':<24} {'estimator':<12} {'mean':>9} {'stderr':>9} {'median':>9} {'mean/med':>9}  runs  err"]
    for r in rows:
        flag = " heavy-tail" if r.heavy_tail else ""
        lines.append(f"{r.group:<24} {r.estimator_name:<12} {r.mean_rmse:9.4f} {r.stderr_rmse:9.4f} "
                     f"{r.median_rmse:9.4f} {r.mean_median_ratio:9.3f} {r.n_runs:5d} {r.n_errors:4d}{flag}")
    return "\n".join(lines)
