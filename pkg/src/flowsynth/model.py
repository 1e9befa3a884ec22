"""Masked-window autoregressive generator.

One head per modelled column. Every head owns a window CNN trunk; continuous
columns end in a mixture density layer (three parallel dense layers for the
weights, means and log-sigmas), discrete columns in a softmax layer.

Mask A hides the whole current row from every head, so attributes of a row
are conditionally independent given the previous ``k`` rows. Mask B lets
the head of column ``j`` see the current-row values of the columns generated
before it.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .checkpoint import STAN_MAGIC, read_container, write_container
from .mixture import (MixtureParams, mdn_nll_grad, mixture_bin_masses, mixture_from_raw, sample_categorical,
                      sample_mixture, softmax, softmax_ce_grad)
from .neural import Adam, Dense, Network, resolve_trunk, with_flatten
from .schema import AttributeSchema, Codec, ScalerParams, build_windows, continuous_values, fit_scalers, time_attribute

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class StanConfig:
    mask: str = "B"
    k: int = 10
    components: int = 10
    trunk: object = "full"
    epochs: int = 30
    patience: int = 5
    batch_size: int = 512
    lr_mdn: float = 1e-3
    lr_softmax: float = 1e-2
    validation_fraction: float = 0.1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.mask = str(self.mask).upper()
        if self.mask not in ("A", "B"):
            raise ValueError("mask must be 'A' or 'B'")
        if self.k < 1 or self.components < 1 or self.epochs < 1 or self.batch_size < 2:
            raise ValueError("k, components and epochs must be >= 1 and batch_size >= 2")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if not isinstance(self.trunk, str):
            self.trunk = list(self.trunk)
        resolve_trunk(self.trunk)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --------------------------------------------------------------------------- masks

def mask_keep(schema: AttributeSchema, mask: str, j: int) -> np.ndarray:
    """Current-row slots visible to the head of column ``j`` (1 keep, 0 zero)."""
    keep = np.zeros(schema.width, dtype=np.float32)
    if str(mask).upper() == "A":
        return keep
    ranks = schema.column_ranks()
    for c, col in enumerate(schema.columns):
        if ranks[c] < ranks[j]:
            keep[col.offset:col.offset + col.width] = 1.0
    return keep


def apply_mask(window: np.ndarray, mask: str, j: int, schema: AttributeSchema) -> np.ndarray:
    """Copy of ``window`` (…, k+1, W) with the hidden current-row slots zeroed."""
    out = np.array(window, copy=True)
    out[..., -1, :] *= mask_keep(schema, mask, j)
    return out


# --------------------------------------------------------------------------- heads

class AttributeHead:
    def __init__(self, j: int, schema: AttributeSchema, config: StanConfig, rng: np.random.Generator,
                 init_targets: np.ndarray | None = None):
        col = schema.columns[j]
        self.j = j
        self.name = col.name
        self.kind = col.head
        self.cardinality = col.cardinality
        self.keep = mask_keep(schema, config.mask, j)
        self.k = config.k
        self.trunk = Network(with_flatten(resolve_trunk(config.trunk)), (1, config.k + 1, schema.width), rng)
        feat = self.trunk.output_shape
        if self.kind == "mdn":
            g = config.components
            self.outputs = [Dense(g), Dense(g), Dense(g)]
            self.lr = config.lr_mdn
        else:
            self.outputs = [Dense(col.cardinality)]
            self.lr = config.lr_softmax
        for layer in self.outputs:
            layer.init(feat, rng, np.float32)
        if self.kind == "mdn" and init_targets is not None and len(init_targets):
            # spread the component means over the target quantiles
            g = config.components
            q = np.quantile(init_targets, (np.arange(g) + 0.5) / g)
            self.outputs[1].params["bias"][:] = q.astype(np.float32)

    # -- plumbing
    def layers(self):
        return self.trunk.layers + self.outputs

    def refs(self):
        return self.trunk.parameters() + [(layer, k) for layer in self.outputs for k in layer.params]

    def zero_grad(self):
        for layer in self.layers():
            layer.zero_grad()

    def tensors(self) -> dict:
        out = {f"trunk.{k}": v for k, v in self.trunk.tensors().items()}
        for i, layer in enumerate(self.outputs):
            for k, v in layer.params.items():
                out[f"out{i}.{k}"] = v
        return out

    def load_tensors(self, tensors: dict):
        self.trunk.load_tensors({k[len("trunk."):]: v for k, v in tensors.items() if k.startswith("trunk.")})
        for i, layer in enumerate(self.outputs):
            for k in layer.params:
                key = f"out{i}.{k}"
                if key not in tensors or tensors[key].shape != layer.params[k].shape:
                    raise ValueError(f"missing or misshapen tensor {self.name}/{key}")
                layer.params[k] = tensors[key].astype(np.float32)
        self.zero_grad()

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.tensors().items()}

    # -- compute
    def _inputs(self, windows: np.ndarray) -> np.ndarray:
        x = np.array(windows, dtype=np.float32, copy=True)
        x[:, -1, :] *= self.keep
        return x[:, None, :, :]

    def raw(self, windows: np.ndarray, train: bool = False):
        h = self.trunk.forward(self._inputs(windows), train)
        return [layer.forward(h, train) for layer in self.outputs]

    def loss_and_backward(self, windows, targets) -> float:
        self.zero_grad()
        outs = self.raw(windows, train=True)
        if self.kind == "mdn":
            loss, da, dm, ds = mdn_nll_grad(*outs, targets)
            grads = [da, dm, ds]
        else:
            loss, dl = softmax_ce_grad(outs[0], targets)
            grads = [dl]
        if not math.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        dh = sum(layer.backward(g.astype(np.float32)) for layer, g in zip(self.outputs, grads))
        self.trunk.backward(dh)
        return loss

    def eval_loss(self, windows, targets, batch=2048) -> float:
        total = 0.0
        for s in range(0, len(targets), batch):
            outs = self.raw(windows[s:s + batch])
            if self.kind == "mdn":
                loss, *_ = mdn_nll_grad(*outs, targets[s:s + batch])
            else:
                loss, _ = softmax_ce_grad(outs[0], targets[s:s + batch])
            total += loss * len(targets[s:s + batch])
        return total / max(len(targets), 1)

    def predict(self, windows):
        """MixtureParams for mdn heads, class probabilities for softmax heads."""
        outs = self.raw(windows)
        if self.kind == "mdn":
            return mixture_from_raw(*outs)
        return softmax(outs[0])


# --------------------------------------------------------------------------- model

@dataclass
class TrainingLog:
    epochs: dict = field(default_factory=dict)      # column -> list of {epoch, train, validation}
    best_epoch: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


class StanModel:
    def __init__(self, schema: AttributeSchema, scalers: ScalerParams, config: StanConfig):
        if config.k != schema.k:
            schema = AttributeSchema(schema.attributes, schema.generation_order, config.k)
        self.schema = schema
        self.scalers = scalers
        self.config = config
        self.codec = Codec(schema, scalers)
        self.heads: list[AttributeHead] = []
        self.log = TrainingLog()
        self.time_format = "epoch"
        self.start_time = 0.0

    @property
    def k(self):
        return self.config.k

    def _build_heads(self, coded=None):
        self.heads = []
        for j, col in enumerate(self.schema.columns):
            rng = np.random.default_rng([self.config.seed, j])
            targets = coded[:, j] if coded is not None and col.head == "mdn" else None
            self.heads.append(AttributeHead(j, self.schema, self.config, rng, targets))

    # -- training
    @classmethod
    def train(cls, frame: pd.DataFrame, schema: AttributeSchema, config: StanConfig,
              time_format: str = "epoch", progress=None) -> "StanModel":
        if len(frame) == 0:
            raise ValueError("cannot train on an empty table")
        model = cls(schema, fit_scalers(frame, schema), config)
        model.time_format = time_format
        tcol = time_attribute(schema)
        model.start_time = float(frame[tcol].iloc[0]) if tcol else 0.0
        coded = model.codec.encode(frame)
        model.fit_coded(coded, progress)
        return model

    def fit_coded(self, coded: np.ndarray, progress=None):
        cfg = self.config
        self._build_heads(coded)
        windows = build_windows(self.codec.context(coded), cfg.k)
        n = len(windows)
        split_rng = np.random.default_rng([cfg.seed, 10**6])
        perm = split_rng.permutation(n)
        n_val = max(1, int(round(cfg.validation_fraction * n))) if n > 1 else 0
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        if len(train_idx) == 0:
            train_idx = val_idx

        def run(head: AttributeHead):
            return self._fit_head(head, windows, coded[:, head.j], train_idx, val_idx, progress)

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = list(pool.map(run, self.heads))
        else:
            results = [run(h) for h in self.heads]
        for head, (history, best, secs) in zip(self.heads, results):
            self.log.epochs[head.name] = history
            self.log.best_epoch[head.name] = best
            self.log.seconds[head.name] = secs
            log.info("column %s: best epoch %d of %d (%.1fs)", head.name, best, len(history), secs)

    def _fit_head(self, head, windows, targets, train_idx, val_idx, progress):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, head.j, 7])
        opt = Adam(head.refs(), head.lr)
        history = []
        best, best_epoch, best_state, stale = math.inf, 0, head.snapshot(), 0
        t0 = time.perf_counter()
        vw, vt = windows[val_idx], targets[val_idx]
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(train_idx)
            losses, sizes = [], []
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                if len(idx) < 2:
                    continue
                try:
                    loss = head.loss_and_backward(windows[idx], targets[idx])
                    opt.step()
                except FloatingPointError as exc:
                    raise TrainingError(f"column {head.name}, epoch {epoch}: {exc}") from None
                losses.append(loss)
                sizes.append(len(idx))
            train_loss = float(np.average(losses, weights=sizes)) if losses else math.nan
            val_loss = head.eval_loss(vw, vt) if len(vt) else train_loss
            if not math.isfinite(val_loss):
                raise TrainingError(f"column {head.name}, epoch {epoch}: non-finite validation loss")
            history.append({"epoch": epoch, "train": train_loss, "validation": val_loss})
            if progress:
                progress(head.name, epoch, train_loss, val_loss)
            if val_loss < best:
                best, best_epoch, best_state, stale = val_loss, epoch, head.snapshot(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        head.load_tensors(best_state)
        return history, best_epoch, time.perf_counter() - t0

    # -- generation
    def generate_coded(self, rng: np.random.Generator, rows: int | None = None,
                       horizon: float | None = None, max_rows: int = 10_000_000) -> np.ndarray:
        """Sample coded rows starting from an all-zero context window."""
        if rows is None and horizon is None:
            raise ValueError("give a row count or a time horizon")
        limit = max_rows if rows is None else int(rows)
        schema, codec = self.schema, self.codec
        order = schema.column_order()
        cols = schema.columns
        tcol = time_attribute(schema)
        t_index = schema.column_index(tcol) if tcol else None
        t_attr = schema.attribute(tcol) if tcol else None
        window = np.zeros((1, self.k + 1, schema.width), dtype=np.float32)
        out = []
        elapsed = 0.0
        while len(out) < limit:
            row = np.zeros(len(cols))
            for j in order:
                head = self.heads[j]
                pred = head.predict(window)
                if head.kind == "mdn":
                    v = float(np.clip(sample_mixture(pred, rng)[0], 0.0, 1.0))
                else:
                    v = float(sample_categorical(pred, rng)[0])
                if not math.isfinite(v):
                    raise TrainingError(f"sampling produced NaN for column {head.name}")
                row[j] = v
                c = cols[j]
                window[0, -1, c.offset:c.offset + c.width] = codec.context_value(j, v)
            if horizon is not None and t_index is not None:
                delta = float(self.scalers.unscale(tcol, row[t_index]))
                delta = max(delta, t_attr.minimum or 0.0)
                if elapsed + delta > horizon:
                    break
                elapsed += delta
            out.append(row)
            window[0, :-1] = window[0, 1:]
            window[0, -1] = 0.0
        return np.array(out).reshape(len(out), len(cols))

    def generate(self, rng: np.random.Generator, rows: int | None = None, horizon: float | None = None) -> pd.DataFrame:
        coded = self.generate_coded(rng, rows=rows, horizon=horizon)
        return self.codec.decode(coded, rng, start_time=self.start_time)

    # -- densities for likelihood evaluation
    def _teacher_windows(self, frame: pd.DataFrame) -> np.ndarray:
        # scoring asks for one column at a time; encode each frame once
        cached = getattr(self, "_window_cache", None)
        if cached is not None and cached[0] is frame and cached[1] == len(frame):
            return cached[2]
        windows = build_windows(self.codec.context(self.codec.encode(frame)), self.k)
        self._window_cache = (frame, len(frame), windows)
        return windows

    def column_predictions(self, frame: pd.DataFrame, j: int, batch: int = 2048):
        """Teacher-forced predictive distribution of column ``j`` for every row of ``frame``."""
        windows = self._teacher_windows(frame)
        head = self.heads[j]
        parts = [head.predict(windows[s:s + batch]) for s in range(0, len(windows), batch)]
        if head.kind == "mdn":
            return MixtureParams(np.vstack([p.alpha for p in parts]), np.vstack([p.mu for p in parts]),
                                 np.vstack([p.sigma for p in parts]))
        return np.vstack(parts)

    def column_masses(self, frame: pd.DataFrame, j: int, edges=None) -> np.ndarray:
        """(n, bins) mass per row; ``edges`` are in original units for continuous columns."""
        pred = self.column_predictions(frame, j)
        if self.heads[j].kind == "mdn":
            name = self.schema.columns[j].attribute
            lo, hi = self.scalers.mins[name], self.scalers.maxs[name]
            scaled = (np.asarray(edges, dtype=np.float64) - lo) / (hi - lo if hi > lo else 1.0)
            return mixture_bin_masses(pred, scaled)
        return pred

    # -- persistence
    def metadata(self) -> dict:
        return {
            "kind": "stan",
            "schema": self.schema.to_dict(),
            "scalers": self.scalers.to_dict(),
            "config": self.config.to_dict(),
            "k": self.k,
            "components": self.config.components,
            "generation_order": list(self.schema.generation_order),
            "time_format": self.time_format,
            "start_time": self.start_time,
            # wall-clock timings stay out so that reruns give identical files
            "training": {"epochs": self.log.epochs, "best_epoch": self.log.best_epoch},
            "heads": [{"column": h.name, "kind": h.kind, "cardinality": h.cardinality,
                       "tensors": list(h.tensors())} for h in self.heads],
        }

    def save(self, path):
        tensors = {}
        for h in self.heads:
            for k, v in h.tensors().items():
                tensors[f"{h.name}/{k}"] = v
        write_container(path, STAN_MAGIC, self.metadata(), tensors)

    @classmethod
    def load(cls, path) -> "StanModel":
        _, meta, tensors = read_container(path, expect=STAN_MAGIC)
        schema = AttributeSchema.from_dict(meta["schema"])
        model = cls(schema, ScalerParams.from_dict(meta["scalers"]), StanConfig.from_dict(meta["config"]))
        model.time_format = meta["time_format"]
        model.start_time = meta["start_time"]
        tr = meta.get("training", {})
        model.log = TrainingLog(tr.get("epochs", {}), tr.get("best_epoch", {}))
        model._build_heads()
        for h in model.heads:
            prefix = f"{h.name}/"
            h.load_tensors({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        return model


def save_checkpoint(model: StanModel, path):
    model.save(path)


def load_checkpoint(path) -> StanModel:
    return StanModel.load(path)


def time_deltas(frame: pd.DataFrame, schema: AttributeSchema) -> np.ndarray:
    tcol = time_attribute(schema)
    return continuous_values(frame, schema.attribute(tcol)) if tcol else np.zeros(len(frame))
