"""Regression metrics: RMSE, MAE, R² and MAPE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch

METRIC_NAMES = ("rmse", "mae", "r2", "mape")


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    mae: float
    r2: float  # nan when the target is constant
    mape: float  # percent, over non-zero targets; nan if none
    mape_excluded: int = 0

    @property
    def mse(self) -> float:
        return self.rmse**2


def compute_metrics(y, y_hat) -> MetricSet:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise LengthMismatch(f"y has {y.size} values, predictions {y_hat.size}")
    if y.size < 2:
        raise LengthMismatch("metrics need at least two observations")
    err = y - y_hat
    sse = float(err @ err)
    rmse = math.sqrt(sse / y.size)
    mae = float(np.abs(err).mean())
    dev = y - y.mean()
    sst = float(dev @ dev)
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    nz = y != 0
    mape = float(np.mean(np.abs(err[nz]) / np.abs(y[nz])) * 100.0) if nz.any() else math.nan
    return MetricSet(rmse, mae, r2, mape, int((~nz).sum()))
