"""Fidelity metrics: histogram JS divergence, binned likelihood, flow sanity rules.

Density objects used by :func:`attribute_nll` expose
``column_masses(frame, j, edges) -> (n_rows, n_bins)``: the probability of
each bin (continuous column, ``edges`` in original units) or each category
(discrete column) for every row of ``frame``. Generators, baselines and
:class:`EmpiricalDensity` all implement it.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .schema import AttributeSchema, Codec, continuous_values, fit_scalers, flags_to_index

log = logging.getLogger(__name__)

NLL_BINS = 100
JSD_BINS = 50
MASS_FLOOR = 1e-12
WEB_PORTS = (80, 443)


# --------------------------------------------------------------------------- histograms

@dataclass(frozen=True)
class Binning:
    edges: tuple = ()          # continuous: increasing bin edges
    categories: tuple = ()     # discrete: category labels

    def __post_init__(self):
        if bool(self.edges) == bool(self.categories):
            raise ValueError("a binning has either edges or categories")
        if self.edges and (len(self.edges) < 2 or np.any(np.diff(self.edges) <= 0)):
            raise ValueError("edges must be strictly increasing with at least two entries")

    @property
    def size(self) -> int:
        return len(self.edges) - 1 if self.edges else len(self.categories)

    def assign(self, values) -> np.ndarray:
        """Bin index per value; values beyond the edges land in the outer bins."""
        if self.edges:
            v = np.asarray(values, dtype=np.float64)
            return np.clip(np.searchsorted(self.edges, v, side="right") - 1, 0, self.size - 1)
        lookup = {c: i for i, c in enumerate(self.categories)}
        try:
            return np.array([lookup[v] for v in values], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"value {exc} is not among the binning categories") from None


@dataclass(frozen=True)
class Histogram:
    binning: Binning
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.binning.size,):
            raise ValueError("mass length does not match the binning")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise ValueError("histogram mass must be nonnegative and sum to 1")
        object.__setattr__(self, "mass", m)


def histogram(values, binning: Binning) -> Histogram:
    idx = binning.assign(values)
    if len(idx) == 0:
        raise ValueError("cannot build a histogram of no values")
    counts = np.bincount(idx, minlength=binning.size).astype(np.float64)
    return Histogram(binning, counts / counts.sum())


def equal_width(values, bins: int) -> Binning:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        hi = lo + 1.0
    return Binning(edges=tuple(np.linspace(lo, hi, bins + 1)))


def _kl_part(p, m):
    nz = p > 0
    return float(np.sum(p[nz] * np.log2(p[nz] / m[nz])))


def js_divergence(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1]."""
    if p.binning != q.binning:
        raise ValueError("histograms use different binnings")
    m = 0.5 * (p.mass + q.mass)
    return float(np.clip(0.5 * _kl_part(p.mass, m) + 0.5 * _kl_part(q.mass, m), 0.0, 1.0))


def histogram_entropy(h: Histogram) -> float:
    """Shannon entropy in nats."""
    p = h.mass[h.mass > 0]
    return float(-(p * np.log(p)).sum())


# --------------------------------------------------------------------------- per-attribute values

def attribute_values(frame: pd.DataFrame, schema: AttributeSchema, name: str):
    """Values the histograms compare: time attributes as deltas, the rest raw."""
    attr = schema.attribute(name)
    if attr.continuous:
        return continuous_values(frame, attr)
    if attr.kind == "port":
        return frame[name].astype(np.int64).tolist()
    return frame[name].astype(str).tolist()


def jsd_binnings(real: pd.DataFrame, synth: pd.DataFrame, schema: AttributeSchema,
                 bins: int = JSD_BINS) -> dict[str, Binning]:
    out = {}
    for attr in schema.attributes:
        a = attribute_values(real, schema, attr.name)
        b = attribute_values(synth, schema, attr.name)
        if attr.continuous:
            out[attr.name] = equal_width(np.concatenate([a, b]), bins)
        else:
            out[attr.name] = Binning(categories=tuple(sorted(set(a) | set(b))))
    return out


def attribute_jsd(real: pd.DataFrame, synth: pd.DataFrame, schema: AttributeSchema,
                  bins: int = JSD_BINS) -> tuple[dict[str, float], dict[str, tuple[Histogram, Histogram]]]:
    binnings = jsd_binnings(real, synth, schema, bins)
    scores, hists = {}, {}
    for name, b in binnings.items():
        hp = histogram(attribute_values(real, schema, name), b)
        hq = histogram(attribute_values(synth, schema, name), b)
        scores[name] = js_divergence(hp, hq)
        hists[name] = (hp, hq)
    return scores, hists


# --------------------------------------------------------------------------- likelihood

def nll_edges(train: pd.DataFrame, test: pd.DataFrame, schema: AttributeSchema,
              bins: int = NLL_BINS) -> dict[str, np.ndarray]:
    """Equal-width edges over the union of the observed train/test ranges."""
    out = {}
    for attr in schema.attributes:
        if attr.continuous:
            v = np.concatenate([continuous_values(train, attr), continuous_values(test, attr)])
            out[attr.name] = np.array(equal_width(v, bins).edges)
    return out


@dataclass
class NllResult:
    per_attribute: dict
    floored: int = 0


def attribute_nll(density, frame: pd.DataFrame, schema: AttributeSchema, edges: dict) -> NllResult:
    """Mean over rows of -log P(observed bin), summed over an attribute's columns."""
    if len(frame) == 0:
        raise ValueError("no records to score")
    coded_discrete = Codec(schema, fit_scalers(frame, schema)).encode(frame)
    floored = 0
    out = {}
    rows = np.arange(len(frame))
    for j, col in enumerate(schema.columns):
        attr = schema.attribute(col.attribute)
        masses = density.column_masses(frame, j, edges.get(col.attribute))
        if attr.continuous:
            target = Binning(edges=tuple(edges[col.attribute])).assign(continuous_values(frame, attr))
        else:
            target = coded_discrete[:, j].astype(np.int64)
        p = masses[rows, target]
        low = p < MASS_FLOOR
        floored += int(low.sum())
        out[col.attribute] = out.get(col.attribute, 0.0) + float(-np.log(np.maximum(p, MASS_FLOOR)).mean())
    if floored:
        log.warning("%d observed bins had (near) zero mass and were floored at %g", floored, MASS_FLOOR)
    return NllResult(out, floored)


class EmpiricalDensity:
    """Row-independent histogram density of a reference table."""

    def __init__(self, frame: pd.DataFrame, schema: AttributeSchema):
        self.frame = frame
        self.schema = schema
        self.coded = Codec(schema, fit_scalers(frame, schema)).encode(frame)

    def column_masses(self, frame: pd.DataFrame, j: int, edges=None) -> np.ndarray:
        col = self.schema.columns[j]
        attr = self.schema.attribute(col.attribute)
        if attr.continuous:
            h = histogram(continuous_values(self.frame, attr), Binning(edges=tuple(edges))).mass
        else:
            counts = np.bincount(self.coded[:, j].astype(np.int64), minlength=col.cardinality)
            h = counts / counts.sum()
        return np.repeat(h[None, :], len(frame), axis=0)


# --------------------------------------------------------------------------- rules

RULES = {
    1: "source not multicast/broadcast, destination not 0.x",
    2: "pkt >= 1 and byte minimum for TCP (40) / UDP (28)",
    3: "header bytes * pkt <= byt <= 65535 * pkt for TCP (40) / UDP (28)",
    4: "non-TCP flows carry no TCP flags",
    5: "flows on port 80/443 are TCP",
}
OTHER_POLICY = "OTHER protocol flows: byte minimums of tests 2 and 3 skipped; test 2 checks pkt >= 1 only"


@dataclass
class RuleResult:
    evaluated: int
    passed: int

    @property
    def percentage(self) -> float:
        return 100.0 * self.passed / self.evaluated if self.evaluated else 100.0


@dataclass
class RuleReport:
    results: dict[int, RuleResult]
    first_failure: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "policy": OTHER_POLICY,
            "tests": {str(t): {"rule": RULES[t], "evaluated": r.evaluated, "passed": r.passed,
                               "percentage": r.percentage} for t, r in self.results.items()},
        }


def _first_octet(addresses) -> np.ndarray:
    return np.array([int(str(a).split(".", 1)[0]) for a in addresses], dtype=np.int64)


def rule_masks(frame: pd.DataFrame) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per test: (applies, passes) boolean arrays over rows."""
    n = len(frame)
    pr = frame["pr"].astype(str).str.upper().to_numpy()
    tcp, udp = pr == "TCP", pr == "UDP"
    pkt = frame["pkt"].to_numpy(dtype=np.float64)
    byt = frame["byt"].to_numpy(dtype=np.float64)
    sa, da = _first_octet(frame["sa"]), _first_octet(frame["da"])
    flags = np.array([flags_to_index(f) for f in frame["flg"]], dtype=np.int64)
    sp, dp = frame["sp"].to_numpy(dtype=np.int64), frame["dp"].to_numpy(dtype=np.int64)
    header = np.where(tcp, 40.0, np.where(udp, 28.0, 0.0))
    everyone = np.ones(n, dtype=bool)
    return {
        1: (everyone, ~(((sa >= 224) & (sa <= 239)) | (sa == 255)) & (da != 0)),
        2: (everyone, (pkt >= 1) & (byt >= header)),
        3: (tcp | udp, (byt >= header * pkt) & (byt <= 65535.0 * pkt)),
        4: (~tcp, flags == 0),
        5: (np.isin(sp, WEB_PORTS) | np.isin(dp, WEB_PORTS), tcp),
    }


def run_domain_tests(frame: pd.DataFrame, annotate: bool = False) -> RuleReport:
    masks = rule_masks(frame)
    results = {t: RuleResult(int(a.sum()), int((a & p).sum())) for t, (a, p) in masks.items()}
    first = None
    if annotate:
        first = np.zeros(len(frame), dtype=np.int64)
        for t in sorted(masks, reverse=True):
            a, p = masks[t]
            first[a & ~p] = t
    return RuleReport(results, first)


# --------------------------------------------------------------------------- traffic shape

def unique_ip_distribution(frame: pd.DataFrame) -> dict[str, int]:
    """Per address (seen as source or destination): number of distinct peers."""
    peers = defaultdict(set)
    for a, b in zip(frame["sa"], frame["da"]):
        peers[a].add(b)
        peers[b].add(a)
    return {ip: len(p) for ip, p in peers.items()}


def byte_volume_distribution(frame: pd.DataFrame) -> dict[str, int]:
    """Per address: total bytes of flows it took part in, either direction."""
    total = defaultdict(int)
    for a, b, v in zip(frame["sa"], frame["da"], frame["byt"]):
        total[a] += int(v)
        if b != a:
            total[b] += int(v)
    return dict(total)


def top_ports(frame: pd.DataFrame, protocol: str, limit: int = 5, min_share: float = 0.01) -> list[tuple[int, float]]:
    protocol = protocol.upper()
    if protocol not in ("TCP", "UDP"):
        raise ValueError("protocol must be TCP or UDP")
    ports = frame.loc[frame["pr"].astype(str).str.upper() == protocol, "dp"].astype(np.int64)
    if len(ports) == 0:
        return []
    counts = Counter(ports.tolist())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(int(p), c / len(ports)) for p, c in ranked if c / len(ports) >= min_share][:limit]


def _summary(values) -> dict:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return {"count": 0}
    q = np.quantile(v, [0.5, 0.9, 0.99])
    return {"count": int(v.size), "mean": float(v.mean()), "median": float(q[0]), "p90": float(q[1]),
            "p99": float(q[2]), "max": float(v.max())}


# --------------------------------------------------------------------------- report

def evaluate(real: pd.DataFrame, synth: pd.DataFrame, schema: AttributeSchema, density=None,
             train: pd.DataFrame | None = None, netflow: bool | None = None) -> tuple[dict, dict]:
    """Full comparison report plus the histograms behind it.

    ``density`` (optional) is scored by binned NLL on ``real``; NLL edges span
    ``train`` and ``real`` when a training table is given.
    """
    missing = [c for c in schema.names if c not in synth.columns or c not in real.columns]
    if missing:
        raise ValueError(f"tables lack schema columns {missing}")
    jsd, hists = attribute_jsd(real, synth, schema)
    report = {"rows": {"real": len(real), "synthetic": len(synth)}, "jsd": jsd}
    if density is not None:
        res = attribute_nll(density, real, schema, nll_edges(train if train is not None else real, real, schema))
        report["nll"] = {"per_attribute": res.per_attribute, "floored": res.floored, "bins": NLL_BINS}
    if netflow if netflow is not None else schema.is_netflow():
        report["rules"] = {"real": run_domain_tests(real).to_dict(), "synthetic": run_domain_tests(synth).to_dict()}
        report["unique_peers"] = {"real": _summary(unique_ip_distribution(real).values()),
                                  "synthetic": _summary(unique_ip_distribution(synth).values())}
        report["byte_volume"] = {"real": _summary(byte_volume_distribution(real).values()),
                                 "synthetic": _summary(byte_volume_distribution(synth).values())}
        report["top_ports"] = {
            side: {"TCP": top_ports(df, "TCP", 5), "UDP": top_ports(df, "UDP", 3)}
            for side, df in (("real", real), ("synthetic", synth))}
    return report, hists


def write_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(path, real: Histogram, synth: Histogram):
    """One line per bin: bin label(s), real mass, synthetic mass."""
    if real.binning != synth.binning:
        raise ValueError("histograms use different binnings")
    b = real.binning
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if b.edges:
            w.writerow(["lo", "hi", "real", "synthetic"])
            for i in range(b.size):
                w.writerow([f"{b.edges[i]:.10g}", f"{b.edges[i + 1]:.10g}",
                            f"{real.mass[i]:.10g}", f"{synth.mass[i]:.10g}"])
        else:
            w.writerow(["category", "real", "synthetic"])
            for i, c in enumerate(b.categories):
                w.writerow([c, f"{real.mass[i]:.10g}", f"{synth.mass[i]:.10g}"])


def write_distribution_csv(path, real: dict, synth: dict):
    """Sorted per-user values of both tables (rank-frequency plot data)."""
    a = sorted(real.values(), reverse=True)
    b = sorted(synth.values(), reverse=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "real", "synthetic"])
        for i in range(max(len(a), len(b))):
            w.writerow([i + 1, a[i] if i < len(a) else "", b[i] if i < len(b) else ""])

