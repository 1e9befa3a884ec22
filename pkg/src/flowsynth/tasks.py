"""Downstream tasks used to judge synthetic flows by what they are good for.

* protocol classification from same-row flow features, scored by macro-F1
  with a bagged decision-tree ensemble;
* next-flow byte forecasting from a host's previous flows, scored by MSE
  with a one-hidden-layer network;
* substitution curves: the same tasks with a growing share of the training
  rows swapped for synthetic ones, always tested on held-out real rows.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .neural import Adam, Network, kernels
from .schema import PROTOCOLS, encode_ports, flag_bits, flags_to_index

log = logging.getLogger(__name__)

BYTE_SCALE = math.log1p(2.0 ** 32 - 1)
DEFAULT_FRACTIONS = (1.0, 0.75, 0.5, 0.25, 0.0)


@dataclass
class TaskDataset:
    X: np.ndarray
    y: np.ndarray
    real_fraction: float = 1.0
    source: str = "real"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2-d with one row per target")
        if not 0.0 <= self.real_fraction <= 1.0:
            raise ValueError("real_fraction must lie in [0, 1]")

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "TaskDataset":
        return TaskDataset(self.X[idx], self.y[idx], self.real_fraction, self.source)


def build_protocol_task(frame: pd.DataFrame) -> TaskDataset:
    """Features: td, pkt, byt, sp and dp categories, six flag bits. Target: protocol index."""
    flags = np.array([flags_to_index(f) for f in frame["flg"]], dtype=np.int64)
    X = np.column_stack([
        frame["td"].to_numpy(dtype=np.float64),
        frame["pkt"].to_numpy(dtype=np.float64),
        frame["byt"].to_numpy(dtype=np.float64),
        encode_ports(frame["sp"].to_numpy()),
        encode_ports(frame["dp"].to_numpy()),
        flag_bits(flags).reshape(len(frame), 6),
    ]) if len(frame) else np.zeros((0, 11))
    lookup = {p: i for i, p in enumerate(PROTOCOLS)}
    y = np.array([lookup[str(p).upper()] for p in frame["pr"]], dtype=np.int64)
    return TaskDataset(X, y)


def scale_bytes(byt) -> np.ndarray:
    return np.log1p(np.asarray(byt, dtype=np.float64)) / BYTE_SCALE


def build_bytes_task(frame: pd.DataFrame, lag: int = 8) -> TaskDataset:
    """Per source host, time ordered: previous ``lag`` byte counts -> next byte count (log-scaled)."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    xs, ys = [], []
    # groupby keeps the row order inside each group, and frames are time sorted on read
    for _, group in frame.groupby("sa", sort=True):
        v = scale_bytes(group["byt"].to_numpy())
        if len(v) <= lag:
            continue
        win = np.lib.stride_tricks.sliding_window_view(v, lag + 1)
        xs.append(win[:, :lag])
        ys.append(win[:, lag])
    if not xs:
        return TaskDataset(np.zeros((0, lag)), np.zeros(0))
    return TaskDataset(np.vstack(xs), np.concatenate(ys))


# --------------------------------------------------------------------------- forest

class DecisionTree:
    """CART classifier on Gini impurity with per-split feature subsampling."""

    def __init__(self, max_depth=12, max_features=None, min_samples_split=2):
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split

    def fit(self, X, y, n_classes, rng):
        self.n_classes = n_classes
        feature, threshold, left, right, value = [], [], [], [], []
        d = X.shape[1]
        m = self.max_features or d

        def node(idx, depth):
            nid = len(feature)
            counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(counts / counts.sum())
            n = len(idx)
            if depth >= self.max_depth or n < self.min_samples_split or counts.max() == n:
                return nid
            parent = 1.0 - ((counts / n) ** 2).sum()
            best = (parent - 1e-12, -1, 0.0, None)
            for f in rng.choice(d, size=m, replace=False):
                col = X[idx, f]
                order = np.argsort(col, kind="stable")
                xs = np.ascontiguousarray(col[order])
                pos, score = kernels.best_gini_split(xs, np.ascontiguousarray(y[idx][order]), n_classes)
                if pos > 0 and score < best[0]:
                    best = (score, int(f), 0.5 * (xs[pos - 1] + xs[pos]), None)
            if best[1] < 0:
                return nid
            f, thr = best[1], best[2]
            go_left = X[idx, f] <= thr
            feature[nid], threshold[nid] = f, thr
            left[nid] = node(idx[go_left], depth + 1)
            right[nid] = node(idx[~go_left], depth + 1)
            return nid

        node(np.arange(len(y)), 0)
        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.array(value)
        return self

    def predict_proba(self, X):
        at = np.zeros(len(X), dtype=np.int64)
        while True:
            inner = self.feature[at] >= 0
            if not inner.any():
                break
            rows = np.nonzero(inner)[0]
            nodes = at[rows]
            go_left = X[rows, self.feature[nodes]] <= self.threshold[nodes]
            at[rows] = np.where(go_left, self.left[nodes], self.right[nodes])
        return self.value[at]


class RandomForest:
    def __init__(self, n_trees=50, max_depth=12, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.constant = None

    def fit(self, X, y, n_classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("cannot train on an empty dataset")
        self.n_classes = int(n_classes or y.max() + 1)
        if len(np.unique(y)) == 1:
            log.warning("only one class in the training data; predicting it everywhere")
            self.constant = int(y[0])
            return self
        m = max(1, int(math.sqrt(X.shape[1])))
        self.trees = []
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            boot = rng.integers(0, len(y), len(y))
            tree = DecisionTree(self.max_depth, m).fit(X[boot], y[boot], self.n_classes, rng)
            self.trees.append(tree)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.constant is not None:
            out = np.zeros((len(X), self.n_classes))
            out[:, self.constant] = 1.0
            return out
        return sum(t.predict_proba(X) for t in self.trees) / len(self.trees)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


def train_classifier(ds: TaskDataset, seed: int = 0, n_classes: int | None = None) -> RandomForest:
    return RandomForest(seed=seed).fit(ds.X, ds.y, n_classes or len(PROTOCOLS))


# --------------------------------------------------------------------------- regressor

class MlpRegressor:
    """dense(32) -> relu -> dense(1), squared error, Adam."""

    def __init__(self, hidden=32, epochs=50, lr=1e-3, batch_size=32, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        if len(y) == 0:
            raise ValueError("cannot train on an empty dataset")
        rng = np.random.default_rng(self.seed)
        self.net = Network((f"dense:{self.hidden}", "relu", "dense:1"), (X.shape[1],), rng, np.float64)
        opt = Adam(self.net.parameters(), self.lr)
        for _ in range(self.epochs):
            order = rng.permutation(len(y))
            for s in range(0, len(y), self.batch_size):
                idx = order[s:s + self.batch_size]
                self.net.zero_grad()
                err = self.net.forward(X[idx], train=True) - y[idx]
                self.net.backward(2.0 * err / len(idx))
                opt.step()
        return self

    def predict(self, X):
        return self.net.forward(np.asarray(X, dtype=np.float64)).ravel()


def train_regressor(ds: TaskDataset, seed: int = 0) -> MlpRegressor:
    return MlpRegressor(seed=seed).fit(ds.X, ds.y)


# --------------------------------------------------------------------------- metrics

def macro_f1(predictions, targets) -> float:
    p = np.asarray(predictions)
    t = np.asarray(targets)
    if p.shape != t.shape:
        raise ValueError("predictions and targets differ in length")
    if p.size == 0:
        raise ValueError("macro_f1 of no predictions")
    scores = []
    for c in np.union1d(p, t):
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        scores.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores))


def mse(predictions, targets) -> float:
    return float(np.mean((np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)) ** 2))


# --------------------------------------------------------------------------- substitution

TASKS = {
    "protocol": ("macro_f1", build_protocol_task),
    "bytes": ("mse", build_bytes_task),
}


@dataclass
class TaskResult:
    task: str
    metric: str
    fraction: float
    value: float                      # mean over synthetic sets of the fold mean
    stddev: float
    per_set: list = field(default_factory=list)
    per_fold: list = field(default_factory=list)   # folds of the first set
    residual_quantiles: dict = field(default_factory=dict)


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if n < folds:
        raise ValueError(f"need at least {folds} real examples for {folds}-fold evaluation")
    perm = np.random.default_rng([seed, 99]).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _score(task: str, train: TaskDataset, test: TaskDataset, seed: int):
    if task == "protocol":
        model = train_classifier(train, seed)
        return macro_f1(model.predict(test.X), test.y), None
    model = train_regressor(train, seed)
    pred = model.predict(test.X)
    return mse(pred, test.y), np.abs(pred - test.y)


def _mix(real: TaskDataset, synth: TaskDataset, fraction: float, n: int, rng) -> TaskDataset:
    n_real = int(round(fraction * n))
    n_syn = n - n_real
    if n_syn > len(synth):
        raise ValueError(f"fraction {fraction}: need {n_syn} synthetic examples, have {len(synth)}")
    pick = np.sort(rng.choice(len(synth), size=n_syn, replace=False)) if n_syn else np.zeros(0, dtype=np.int64)
    return TaskDataset(np.vstack([real.X[:n_real], synth.X[pick]]),
                       np.concatenate([real.y[:n_real], synth.y[pick]]).astype(real.y.dtype),
                       fraction, "mixed")


def cross_validate(task: str, real: TaskDataset, synth: TaskDataset | None, fraction: float,
                   folds: int = 5, seed: int = 0, cap: int | None = None):
    """Fold scores at one real fraction; the test fold is always real."""
    parts = fold_indices(len(real), folds, seed)
    scores, residuals = [], []
    for k, test_idx in enumerate(parts):
        train_idx = np.concatenate([p for i, p in enumerate(parts) if i != k])
        order = np.random.default_rng([seed, k]).permutation(train_idx)
        pool = real.take(order)
        n = len(pool) if cap is None else min(cap, len(pool))
        if fraction < 1.0:
            if synth is None:
                raise ValueError("a fraction below 1 needs synthetic data")
            train = _mix(pool, synth, fraction, n, np.random.default_rng([seed, k, 1]))
        else:
            train = pool.take(np.arange(n))
        score, res = _score(task, train, real.take(test_idx), seed + k)
        scores.append(score)
        if res is not None:
            residuals.append(res)
    return scores, (np.concatenate(residuals) if residuals else None)


def substitution_curve(real: pd.DataFrame, synthetic: list[pd.DataFrame], task: str = "protocol",
                       fractions=DEFAULT_FRACTIONS, folds: int = 5, seed: int = 0,
                       cap: int | None = None, lag: int = 8) -> list[TaskResult]:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    fractions = sorted({float(f) for f in fractions}, reverse=True)
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    metric, builder = TASKS[task]
    build = (lambda f: builder(f, lag)) if task == "bytes" else builder
    real_ds = build(real)
    synth_ds = [build(s) for s in synthetic]
    if any(f < 1.0 for f in fractions) and not synth_ds:
        raise ValueError("fractions below 1 need at least one synthetic table")
    results = []
    for f in fractions:
        per_set, first_folds, resid = [], None, None
        sets = synth_ds if f < 1.0 else [None]
        for s in sets:
            scores, res = cross_validate(task, real_ds, s, f, folds, seed, cap)
            per_set.append(float(np.mean(scores)))
            if first_folds is None:
                first_folds, resid = scores, res
        if f == 1.0 and synth_ds:
            per_set = per_set * len(synth_ds)   # real-only point does not depend on the synthetic set
        q = {}
        if resid is not None and len(resid):
            q = {str(p): float(v) for p, v in zip((0.5, 0.9, 0.99), np.quantile(resid, (0.5, 0.9, 0.99)))}
        results.append(TaskResult(task, metric, f, float(np.mean(per_set)), float(np.std(per_set)),
                                  per_set, [float(v) for v in first_folds], q))
    return results


def real_baseline(real: pd.DataFrame, task: str = "protocol", folds: int = 5, seed: int = 0,
                  cap: int | None = None, lag: int = 8) -> float:
    return substitution_curve(real, [], task, (1.0,), folds, seed, cap, lag)[0].value


def write_curve_csv(results: list[TaskResult], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "metric", "mean", "stddev"])
        for r in sorted(results, key=lambda r: r.fraction):
            w.writerow([f"{r.fraction:g}", r.metric, repr(r.value), repr(r.stddev)])
