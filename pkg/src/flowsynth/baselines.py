"""Explicit-density baselines.

``GmmModel`` treats every modelled column of a row as independent: a 1-d
Gaussian mixture per continuous column, smoothed category frequencies per
discrete column, rows i.i.d.

``BnModel`` keeps those marginals but makes one child column depend on its
own previous-row value and on one same-row parent column, both discretised
into equal-frequency bins. Each (previous-child bin, parent bin) cell holds
its own small mixture; empty cells fall back to the child's marginal.
"""
from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from .checkpoint import BN_MAGIC, GMM_MAGIC, read_container, write_container
from .mixture import Mixture1D, fit_mixture_1d, mixture_bin_masses, sample_categorical, sample_mixture
from .schema import AttributeSchema, Codec, ScalerParams, fit_scalers, time_attribute

log = logging.getLogger(__name__)

PARENT_BINS = 16


class _Marginals:
    """Independent per-column distributions in coded space."""

    def __init__(self, schema: AttributeSchema, scalers: ScalerParams, components: int):
        self.schema = schema
        self.scalers = scalers
        self.codec = Codec(schema, scalers)
        self.components = components
        self.mixtures: dict[int, Mixture1D] = {}
        self.freqs: dict[int, np.ndarray] = {}
        self.time_format = "epoch"
        self.start_time = 0.0

    def _fit(self, frame: pd.DataFrame, time_format: str) -> np.ndarray:
        if len(frame) == 0:
            raise ValueError("cannot fit on an empty table")
        self.time_format = time_format
        tcol = time_attribute(self.schema)
        self.start_time = float(frame[tcol].iloc[0]) if tcol else 0.0
        coded = self.codec.encode(frame)
        for j, col in enumerate(self.schema.columns):
            if col.head == "mdn":
                self.mixtures[j] = fit_mixture_1d(coded[:, j], self.components)
            else:
                counts = np.bincount(coded[:, j].astype(np.int64), minlength=col.cardinality)
                self.freqs[j] = (counts + 1.0) / (counts.sum() + col.cardinality)
        return coded

    def _sample_column(self, j: int, n: int, rng) -> np.ndarray:
        if j in self.mixtures:
            return np.clip(sample_mixture(self.mixtures[j].params(n), rng), 0.0, 1.0) if n else np.zeros(0)
        p = self.freqs[j]
        return sample_categorical(np.broadcast_to(p, (n, len(p))), rng).astype(np.float64) if n else np.zeros(0)

    def _scaled_edges(self, j: int, edges) -> np.ndarray:
        name = self.schema.columns[j].attribute
        lo, hi = self.scalers.mins[name], self.scalers.maxs[name]
        return (np.asarray(edges, dtype=np.float64) - lo) / (hi - lo if hi > lo else 1.0)

    def _marginal_masses(self, j: int, n: int, edges=None) -> np.ndarray:
        if j in self.mixtures:
            return np.repeat(mixture_bin_masses(self.mixtures[j].params(1), self._scaled_edges(j, edges)), n, axis=0)
        return np.repeat(self.freqs[j][None, :], n, axis=0)

    def _meta(self, kind: str) -> dict:
        return {
            "kind": kind,
            "schema": self.schema.to_dict(),
            "scalers": self.scalers.to_dict(),
            "components": self.components,
            "time_format": self.time_format,
            "start_time": self.start_time,
            "mixtures": {str(j): m.to_dict() for j, m in self.mixtures.items()},
            "freqs": {str(j): f.tolist() for j, f in self.freqs.items()},
        }

    def _restore(self, meta: dict):
        self.time_format = meta["time_format"]
        self.start_time = meta["start_time"]
        self.mixtures = {int(j): Mixture1D.from_dict(d) for j, d in meta["mixtures"].items()}
        self.freqs = {int(j): np.array(f) for j, f in meta["freqs"].items()}

    def generate(self, rng: np.random.Generator, rows: int | None = None, horizon: float | None = None) -> pd.DataFrame:
        if rows is None and horizon is None:
            raise ValueError("give a row count or a time horizon")
        if rows is not None:
            coded = self.sample_coded(int(rows), rng)
        else:
            coded = self._sample_until(horizon, rng)
        return self.codec.decode(coded, rng, start_time=self.start_time)

    def _sample_until(self, horizon: float, rng) -> np.ndarray:
        tcol = time_attribute(self.schema)
        if tcol is None:
            raise ValueError("a time horizon needs a time attribute")
        t = self.schema.column_index(tcol)
        chunks, elapsed, chunk = [], 0.0, 4096
        minimum = self.schema.attribute(tcol).minimum or 0.0
        while True:
            part = self.sample_coded(chunk, rng)
            deltas = np.maximum(self.scalers.unscale(tcol, part[:, t]), minimum)
            ends = elapsed + np.cumsum(deltas)
            stop = int(np.searchsorted(ends, horizon, side="right"))
            chunks.append(part[:stop])
            if stop < chunk:
                break
            elapsed = float(ends[-1])
        return np.vstack(chunks)

    def sample_coded(self, n: int, rng) -> np.ndarray:
        raise NotImplementedError


class GmmModel(_Marginals):
    def sample_coded(self, n: int, rng) -> np.ndarray:
        out = np.zeros((n, len(self.schema.columns)))
        for j in range(len(self.schema.columns)):
            out[:, j] = self._sample_column(j, n, rng)
        return out

    def column_masses(self, frame: pd.DataFrame, j: int, edges=None) -> np.ndarray:
        return self._marginal_masses(j, len(frame), edges)

    def save(self, path):
        write_container(path, GMM_MAGIC, self._meta("gmm"), {})

    @classmethod
    def load(cls, path) -> "GmmModel":
        _, meta, _ = read_container(path, expect=GMM_MAGIC)
        m = cls(AttributeSchema.from_dict(meta["schema"]), ScalerParams.from_dict(meta["scalers"]), meta["components"])
        m._restore(meta)
        return m


def fit_gmm(frame: pd.DataFrame, schema: AttributeSchema, components: int = 10,
            time_format: str = "epoch") -> GmmModel:
    model = GmmModel(schema, fit_scalers(frame, schema), components)
    model._fit(frame, time_format)
    return model


def sample_gmm(model: GmmModel, n: int, rng: np.random.Generator) -> pd.DataFrame:
    return model.generate(rng, rows=n)


# --------------------------------------------------------------------------- BN

def _quantile_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Interior cut points of equal-frequency bins (ties collapse bins)."""
    return np.unique(np.quantile(values, np.arange(1, bins) / bins))


class BnModel(_Marginals):
    def __init__(self, schema, scalers, components, child: str = "byt", parent: str = "pkt",
                 bins: int = PARENT_BINS, independent: bool = False):
        super().__init__(schema, scalers, components)
        self.child = child
        self.parent = parent
        self.bins = bins
        self.independent = independent
        self.j1 = schema.column_index(child)
        self.j2 = schema.column_index(parent)
        if schema.columns[self.j1].head != "mdn":
            raise ValueError(f"child attribute {child!r} must be continuous")
        if self.j1 == self.j2:
            raise ValueError("child and parent must differ")
        self.child_edges = np.zeros(0)
        self.parent_edges = np.zeros(0)
        self.cells: dict[tuple[int, int], Mixture1D] = {}

    def _parent_bin(self, values) -> np.ndarray:
        if self.schema.columns[self.j2].head == "mdn":
            return np.searchsorted(self.parent_edges, values, side="right")
        return np.asarray(values, dtype=np.int64)

    def _child_bin(self, values) -> np.ndarray:
        return np.searchsorted(self.child_edges, values, side="right")

    def _fit_cells(self, coded: np.ndarray):
        child = coded[:, self.j1]
        self.child_edges = _quantile_edges(child, self.bins)
        if self.schema.columns[self.j2].head == "mdn":
            self.parent_edges = _quantile_edges(coded[:, self.j2], self.bins)
        if self.independent or len(coded) < 2:
            return
        prev = self._child_bin(child[:-1])
        par = self._parent_bin(coded[1:, self.j2])
        target = child[1:]
        for key in sorted(set(zip(prev.tolist(), par.tolist()))):
            sel = target[(prev == key[0]) & (par == key[1])]
            g = max(1, min(self.components, len(sel) // 10))
            self.cells[key] = fit_mixture_1d(sel, g, warn=False)
        slow = sum(not m.converged for m in self.cells.values())
        if slow:
            log.warning("%d of %d conditional cells stopped EM at the iteration cap", slow, len(self.cells))

    def _cell(self, prev_child: float, parent: float) -> Mixture1D:
        key = (int(self._child_bin([prev_child])[0]), int(self._parent_bin([parent])[0]))
        return self.cells.get(key, self.mixtures[self.j1])

    def sample_coded(self, n: int, rng) -> np.ndarray:
        out = np.zeros((n, len(self.schema.columns)))
        for j in range(len(self.schema.columns)):
            if j != self.j1:
                out[:, j] = self._sample_column(j, n, rng)
        if n == 0:
            return out
        out[0, self.j1] = self._sample_column(self.j1, 1, rng)[0]
        for i in range(1, n):
            m = self._cell(out[i - 1, self.j1], out[i, self.j2])
            out[i, self.j1] = np.clip(sample_mixture(m.params(1), rng)[0], 0.0, 1.0)
        return out

    def column_masses(self, frame: pd.DataFrame, j: int, edges=None) -> np.ndarray:
        n = len(frame)
        if j != self.j1 or n == 0:
            return self._marginal_masses(j, n, edges)
        coded = self.codec.encode(frame)
        scaled = self._scaled_edges(j, edges)
        out = self._marginal_masses(j, n, edges)
        cache = {}
        for i in range(1, n):
            m = self._cell(coded[i - 1, self.j1], coded[i, self.j2])
            if id(m) not in cache:
                cache[id(m)] = mixture_bin_masses(m.params(1), scaled)[0]
            out[i] = cache[id(m)]
        return out

    def save(self, path):
        meta = self._meta("bn")
        meta.update({
            "child": self.child, "parent": self.parent, "bins": self.bins, "independent": self.independent,
            "child_edges": self.child_edges.tolist(), "parent_edges": self.parent_edges.tolist(),
            "cells": [[a, b, m.to_dict()] for (a, b), m in sorted(self.cells.items())],
        })
        write_container(path, BN_MAGIC, meta, {})

    @classmethod
    def load(cls, path) -> "BnModel":
        _, meta, _ = read_container(path, expect=BN_MAGIC)
        m = cls(AttributeSchema.from_dict(meta["schema"]), ScalerParams.from_dict(meta["scalers"]),
                meta["components"], meta["child"], meta["parent"], meta["bins"], meta["independent"])
        m._restore(meta)
        m.child_edges = np.array(meta["child_edges"])
        m.parent_edges = np.array(meta["parent_edges"])
        m.cells = {(a, b): Mixture1D.from_dict(d) for a, b, d in meta["cells"]}
        return m


def fit_bn(frame: pd.DataFrame, schema: AttributeSchema, child: str = "byt", parent: str = "pkt",
           components: int = 10, bins: int = PARENT_BINS, independent: bool = False,
           time_format: str = "epoch") -> BnModel:
    model = BnModel(schema, fit_scalers(frame, schema), components, child, parent, bins, independent)
    coded = model._fit(frame, time_format)
    model._fit_cells(coded)
    return model


def sample_bn(model: BnModel, n: int, rng: np.random.Generator) -> pd.DataFrame:
    return model.generate(rng, rows=n)
