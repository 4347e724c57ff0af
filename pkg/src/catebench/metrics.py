"""CATE accuracy metrics and run-level aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

#: mean / median ratio at which a group's RMSE distribution is flagged as tail-dominated
HEAVY_TAIL_RATIO = 1.5


@dataclass(frozen=True)
class RunRecord:
    setting_name: str
    draw_id: int
    repetition: int
    estimator_name: str
    status: str = "ok"
    rmse: float | None = None
    nrmse: float | None = None
    sigma_tau: float | None = None
    sigma_mu0: float | None = None
    n_test: int = 0
    draw_seed: int = 0
    task_seed: int = 0
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class AggregateRow:
    estimator_name: str
    group: str
    mean_rmse: float
    stderr_rmse: float
    median_rmse: float
    n_runs: int
    n_errors: int = 0

    @property
    def mean_median_ratio(self) -> float:
        return self.mean_rmse / self.median_rmse if self.median_rmse > 0 else math.inf

    @property
    def heavy_tail(self) -> bool:
        return self.mean_median_ratio >= HEAVY_TAIL_RATIO


def rmse_cate(tau_hat, tau_true) -> float:
    tau_hat = np.asarray(tau_hat, dtype=float)
    tau_true = np.asarray(tau_true, dtype=float)
    if tau_hat.shape != tau_true.shape or tau_hat.size == 0:
        raise ValueError(f"length mismatch: {tau_hat.shape} vs {tau_true.shape}")
    return float(np.sqrt(np.mean((tau_hat - tau_true) ** 2)))


def sigma_of(values) -> float:
    """Population (1/n) standard deviation."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("standard deviation of an empty set")
    if values.min() == values.max():
        return 0.0  # the mean of a constant array need not round back to that constant
    return float(np.sqrt(np.mean((values - values.mean()) ** 2)))


def normalized_rmse(rmse: float, sigma_tau: float) -> float | None:
    """``rmse / sigma_tau``, or None when the effect is constant on the test set."""
    if sigma_tau <= 0:
        return None
    return rmse / sigma_tau


def nearest_rank(values: Sequence[float], p: float) -> float:
    if not 0 <= p <= 100:
        raise ValueError(f"percentile {p} outside [0, 100]")
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100 * len(ordered)))
    return ordered[rank - 1]


def percentile_runs(records: Iterable[RunRecord], key: str = "sigma_tau",
                    ps: Sequence[float] = (10, 50, 90)) -> list[int]:
    """Draw ids whose ``key`` sits at each nearest-rank percentile.

    Per-draw key values are taken from the first record of each draw (they
    do not depend on the estimator or repetition).  Ties go to the lowest
    draw id.
    """
    per_draw: dict[int, float] = {}
    for r in records:
        value = getattr(r, key)
        if value is not None and r.draw_id not in per_draw:
            per_draw[r.draw_id] = float(value)
    if not per_draw:
        raise ValueError("no records to select from")
    out = []
    for p in ps:
        target = nearest_rank(list(per_draw.values()), p)
        out.append(min(per_draw, key=lambda d: (abs(per_draw[d] - target), d)))
    return out


def _group_key(group_by) -> Callable[[RunRecord], str]:
    if callable(group_by):
        return group_by
    if group_by == "setting":
        return lambda r: r.setting_name
    if group_by == "all":
        return lambda r: "all"
    raise ValueError(f"unknown grouping {group_by!r}")


def sigma_bins(edges: Sequence[float], key: str = "sigma_tau") -> Callable[[RunRecord], str]:
    """Grouping function that buckets records by ``key`` into ``[lo, hi)`` bins."""
    edges = list(edges)

    def group(r: RunRecord) -> str:
        v = getattr(r, key)
        i = int(np.searchsorted(edges, v, side="right")) - 1
        i = min(max(i, 0), len(edges) - 2)
        return f"{r.setting_name}|{key}[{edges[i]:g},{edges[i + 1]:g})"

    return group


def draw_means(records: Iterable[RunRecord], group_by="setting", value: str = "rmse"):
    """Average repetitions within each (group, estimator, draw).

    Returns ``{(group, estimator): {draw_id: mean}}`` and error counts keyed
    the same way.
    """
    key = _group_key(group_by)
    acc: dict = defaultdict(lambda: defaultdict(list))
    errors: dict = defaultdict(int)
    for r in records:
        k = (key(r), r.estimator_name)
        if not r.ok:
            errors[k] += 1
            continue
        v = getattr(r, value)
        if v is not None:
            acc[k][r.draw_id].append(float(v))
    means = {k: {d: float(np.mean(v)) for d, v in sorted(per.items())} for k, per in acc.items()}
    return means, errors


def summarize(values: Sequence[float]) -> tuple[float, float, float]:
    """(mean, standard error with the 1/(k-1) sd, median)."""
    v = np.asarray(values, dtype=float)
    stderr = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), stderr, float(np.median(v))


def aggregate(records: Iterable[RunRecord], group_by="setting", value: str = "rmse") -> list[AggregateRow]:
    """Two-level aggregation: repetitions are averaged within a draw first."""
    records = list(records)
    means, errors = draw_means(records, group_by, value)
    rows = []
    for k in sorted(set(means) | set(errors)):
        group, est = k
        per_draw = list(means.get(k, {}).values())
        if per_draw:
            mean, stderr, median = summarize(per_draw)
        else:
            mean = stderr = median = math.nan
        rows.append(AggregateRow(est, group, mean, stderr, median, len(per_draw), errors.get(k, 0)))
    return rows


def histogram(values, bins=10, range=None):
    """Bin edges and counts; ``bins`` is a count or an explicit edge list."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("histogram of an empty set")
    counts, edges = np.histogram(values, bins=bins, range=range)
    return edges, counts
