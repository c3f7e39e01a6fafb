"""Depth error metrics and the evaluation grid runner."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import REGIMES, Scene, degrade
from .io import write_pgm8

DELTA_THRESHOLDS = (1.25, 1.05)
RATIO_EPS = 1e-8


def _masked(y, z, mask):
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    mask = z > 0 if mask is None else np.asarray(mask, dtype=bool)
    if y.shape != z.shape or mask.shape != z.shape:
        raise ValueError(f"shape mismatch: {y.shape}, {z.shape}, {mask.shape}")
    if not mask.any():
        raise ValueError("empty mask")
    return y[mask], z[mask]


def metric_rmse(y, z, mask=None) -> float:
    y, z = _masked(y, z, mask)
    return math.sqrt(np.mean((y - z) ** 2))


def metric_mae(y, z, mask=None) -> float:
    y, z = _masked(y, z, mask)
    return float(np.mean(np.abs(y - z)))


def metric_delta(y, z, mask=None, threshold: float = 1.25) -> float:
    """Percentage of pixels with max(y/z, z/y) < threshold; y <= 0 always fails."""
    y, z = _masked(y, z, mask)
    yg = np.maximum(y, RATIO_EPS)
    ratio = np.maximum(yg / z, z / yg)
    ok = (ratio < threshold) & (y > 0)
    return 100.0 * float(ok.mean())


@dataclass
class MetricsReport:
    scale: float
    regime: str
    rmse: float
    mae: float
    delta: dict[float, float] = field(default_factory=dict)
    n_samples: int = 0

    def row(self) -> dict:
        out = {"scale": self.scale, "regime": self.regime, "rmse": self.rmse, "mae": self.mae}
        for t, v in self.delta.items():
            out[f"delta_{t:g}"] = v
        out["n_samples"] = self.n_samples
        return out


def sample_metrics(y, z, mask=None) -> dict:
    out = {"rmse": metric_rmse(y, z, mask), "mae": metric_mae(y, z, mask)}
    for t in DELTA_THRESHOLDS:
        out[t] = metric_delta(y, z, mask, t)
    return out


def aggregate(per_sample: list[dict], scale: float, regime: str) -> MetricsReport:
    """Average per-sample metrics; fsum keeps the result independent of order."""
    n = len(per_sample)
    avg = lambda key: math.fsum(s[key] for s in per_sample) / n  # noqa: E731
    return MetricsReport(scale, regime, avg("rmse"), avg("mae"), {t: avg(t) for t in DELTA_THRESHOLDS}, n)


def threads_from_env() -> int:
    try:
        return max(1, int(os.environ.get("DUCOS_THREADS", "1")))
    except ValueError:
        return 1


def eval_run(
    model,
    scenes: Sequence[Scene],
    scales: Sequence[float],
    regimes: Sequence[str] = ("clean",),
    seed: int = 0,
    prompts: Callable | None = None,
    error_map_dir=None,
    threads: int | None = None,
) -> list[MetricsReport]:
    """One report per (scale, regime). ``model`` is a DuCosModel or any
    callable mapping (x [1, H, W], PromptFlow) to a prediction of the same shape.

    ``prompts(i, scene)`` may supply a PromptFlow or DPF path per scene;
    by default the synthetic oracle is used.
    """
    for r in regimes:
        if r not in REGIMES:
            raise ValueError(f"unknown regime {r!r}")
    predict = model.predict if hasattr(model, "predict") else model
    threads = threads or threads_from_env()
    if error_map_dir is not None:
        Path(error_map_dir).mkdir(parents=True, exist_ok=True)

    def one(args):
        i, scene, scale, regime = args
        pair = degrade(scene, scale, regime, seed + i, prompts(i, scene) if prompts else None)
        y = np.asarray(predict(pair.x, pair.prompts), dtype=np.float64).reshape(pair.z.shape)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite prediction for scene {i}")
        if error_map_dir is not None:
            write_pgm8(Path(error_map_dir) / f"err_x{scale:g}_{regime}_{i:04d}.pgm", np.abs(y - pair.z))
        return sample_metrics(y, pair.z, pair.mask)

    reports = []
    for scale in scales:
        for regime in regimes:
            jobs = [(i, s, scale, regime) for i, s in enumerate(scenes)]
            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    per = list(pool.map(one, jobs))
            else:
                per = [one(j) for j in jobs]
            reports.append(aggregate(per, scale, regime))
    return reports


def write_report_csv(reports: list[MetricsReport], path) -> None:
    rows = [r.row() for r in reports]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
