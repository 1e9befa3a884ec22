"""Two-variable AR(1) toy process used to probe temporal and same-row dependence.

    x_t = 0.9 x_{t-1} + 0.1 e_t
    y_t = 0.9 x_t     + 0.1 f_t

Both lag-one autocorrelation of x and corr(x_t, y_t) are 0.9 in the
stationary regime.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .schema import Attribute, AttributeSchema

BURN_IN = 100
PHI = 0.9
NOISE = 0.1


@dataclass
class SimSeries:
    x: np.ndarray
    y: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-d and of equal length")

    def __len__(self):
        return len(self.x)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "y": self.y})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, seed=None) -> "SimSeries":
        return cls(frame["x"].to_numpy(), frame["y"].to_numpy(), seed)

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def sim_schema(k: int = 10) -> AttributeSchema:
    return AttributeSchema((Attribute("x", "continuous"), Attribute("y", "continuous")), (0, 1), k)


def simulate(n: int, seed: int = 0, burn_in: int = BURN_IN) -> SimSeries:
    """``n`` points after discarding ``burn_in`` warm-up steps (x_1 = 0.1 N(0, 1))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    total = n + burn_in
    e = rng.standard_normal(total)
    f = rng.standard_normal(total)
    x = np.empty(total)
    x[0] = NOISE * e[0]
    for t in range(1, total):
        x[t] = PHI * x[t - 1] + NOISE * e[t]
    y = PHI * x + NOISE * f
    return SimSeries(x[burn_in:], y[burn_in:], seed)


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if sa == 0 or sb == 0:
        raise ValueError("pearson_r is undefined for a zero-variance input")
    return float(np.clip((da * db).sum() / (sa * sb), -1.0, 1.0))


def correlations(s: SimSeries) -> dict:
    return {"r_xt_xt1": pearson_r(s.x[1:], s.x[:-1]), "r_xt_yt": pearson_r(s.x, s.y)}


def _ols(a, b):
    design = np.column_stack([a, np.ones_like(a)])
    coef, *_ = np.linalg.lstsq(design, b, rcond=None)
    return coef


def _mse(coef, a, b):
    pred = coef[0] * a + coef[1]
    return float(np.mean((pred - b) ** 2))


def sim_tasks(train: SimSeries, test: SimSeries) -> tuple[float, float]:
    """(MSE of y_t from x_t, MSE of x_{t+1} from x_t); OLS fit on ``train``, scored on ``test``."""
    t1 = _ols(train.x, train.y)
    t2 = _ols(train.x[:-1], train.x[1:])
    return _mse(t1, test.x, test.y), _mse(t2, test.x[:-1], test.x[1:])


def write_scatter(s: SimSeries, path):
    """Pairs for lag and same-row scatter plots: x_t, x_{t-1}, y_t."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_t", "x_prev", "y_t"])
        for i in range(1, len(s)):
            w.writerow([f"{s.x[i]:.10g}", f"{s.x[i - 1]:.10g}", f"{s.y[i]:.10g}"])
