"""Flow records, attribute schemas, encodings and window construction.

A table passes through three representations:

* a *frame*: a pandas DataFrame of raw attribute values (IP strings, ports,
  protocol names, flag strings, epoch timestamps ...);
* a *coded* matrix: one float64 column per modelled sub-attribute, holding
  min-max scaled values for continuous columns and category indices for
  discrete ones;
* *context rows*: the float32 encoding fed to the window CNN, where small
  categoricals are one-hot, flags are six bits and large categoricals
  (IP octets, port bins) are normalised scalar indices.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

PROTOCOLS = ("TCP", "UDP", "OTHER")
FLAG_LETTERS = "UAPRSF"  # URG, ACK, PSH, RES, SYN, FIN
N_FLAG_CATEGORIES = 64
N_PORT_CATEGORIES = 1670
WELL_KNOWN_PORTS = 1024
PORT_BIN = 100
CANONICAL_COLUMNS = ("te", "td", "sa", "da", "sp", "dp", "pr", "flg", "pkt", "byt")
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
KINDS = ("continuous", "categorical", "ip", "port", "time-delta", "flags")


class SchemaError(ValueError):
    pass


class FlowParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --------------------------------------------------------------------------- records

@dataclass(frozen=True, slots=True)
class FlowRecord:
    te: float
    td: float
    sa: str
    da: str
    sp: int
    dp: int
    pr: str
    flg: str
    pkt: int
    byt: int

    def __post_init__(self):
        encode_ip(self.sa)
        encode_ip(self.da)
        for p in (self.sp, self.dp):
            if not 0 <= p <= 65535:
                raise ValueError(f"port {p} out of range")
        if self.td < 0:
            raise ValueError(f"negative duration {self.td}")
        if self.pkt < 1 or self.byt < 1:
            raise ValueError(f"pkt and byt must be >= 1, got {self.pkt}, {self.byt}")
        if self.pr not in PROTOCOLS:
            raise ValueError(f"protocol {self.pr!r} not in {PROTOCOLS}")
        flags_to_index(self.flg)


def records_to_frame(records: Iterable[FlowRecord]) -> pd.DataFrame:
    rows = [asdict(r) for r in records]
    return pd.DataFrame(rows, columns=list(CANONICAL_COLUMNS))


def frame_to_records(frame: pd.DataFrame) -> list[FlowRecord]:
    cols = [frame[c].tolist() for c in CANONICAL_COLUMNS]
    return [
        FlowRecord(float(te), float(td), sa, da, int(sp), int(dp), pr, flg, int(pkt), int(byt))
        for te, td, sa, da, sp, dp, pr, flg, pkt, byt in zip(*cols)
    ]


# --------------------------------------------------------------------------- primitive codes

def encode_ip(addr: str) -> tuple[int, int, int, int]:
    parts = str(addr).strip().split(".")
    if len(parts) != 4:
        raise ValueError(f"not an IPv4 address: {addr!r}")
    try:
        octets = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"not an IPv4 address: {addr!r}") from None
    if any(not 0 <= o <= 255 for o in octets) or any(not p.isdigit() for p in parts):
        raise ValueError(f"not an IPv4 address: {addr!r}")
    return octets


def decode_ip(octets: Sequence[int]) -> str:
    return ".".join(str(int(o)) for o in octets)


def encode_port(p: int) -> int:
    p = int(p)
    if not 0 <= p <= 65535:
        raise ValueError(f"port {p} out of range")
    if p < WELL_KNOWN_PORTS:
        return p
    return WELL_KNOWN_PORTS + (p - WELL_KNOWN_PORTS) // PORT_BIN


def port_bin_range(index: int) -> tuple[int, int]:
    """Inclusive port range covered by a port category."""
    if not 0 <= index < N_PORT_CATEGORIES:
        raise ValueError(f"port category {index} out of range")
    if index < WELL_KNOWN_PORTS:
        return index, index
    lo = WELL_KNOWN_PORTS + (index - WELL_KNOWN_PORTS) * PORT_BIN
    return lo, min(lo + PORT_BIN - 1, 65535)


def decode_port(index: int, rng: np.random.Generator) -> int:
    lo, hi = port_bin_range(int(index))
    return lo if lo == hi else int(rng.integers(lo, hi + 1))


def encode_ports(ports) -> np.ndarray:
    p = np.asarray(ports, dtype=np.int64)
    if p.size and (p.min() < 0 or p.max() > 65535):
        raise ValueError("port out of range")
    return np.where(p < WELL_KNOWN_PORTS, p, WELL_KNOWN_PORTS + (p - WELL_KNOWN_PORTS) // PORT_BIN)


def decode_ports(indices, rng: np.random.Generator) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = idx.copy()
    binned = idx >= WELL_KNOWN_PORTS
    lo = WELL_KNOWN_PORTS + (idx[binned] - WELL_KNOWN_PORTS) * PORT_BIN
    hi = np.minimum(lo + PORT_BIN - 1, 65535)
    out[binned] = rng.integers(lo, hi + 1)
    return out


def flags_to_index(flags: str) -> int:
    """``".A..SF"`` -> 6-bit index, URG as the high bit and FIN as the low bit."""
    s = str(flags).strip()
    if s in ("", "0"):
        return 0
    if len(s) != 6:
        raise ValueError(f"flag field must have 6 positions, got {flags!r}")
    index = 0
    for i, ch in enumerate(s):
        if ch in ".-":
            continue
        if ch.upper() != FLAG_LETTERS[i]:
            raise ValueError(f"unexpected flag {ch!r} at position {i} in {flags!r}")
        index |= 1 << (5 - i)
    return index


def index_to_flags(index: int) -> str:
    return "".join(FLAG_LETTERS[i] if (int(index) >> (5 - i)) & 1 else "." for i in range(6))


def flag_bits(indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    return ((idx[:, None] >> (5 - np.arange(6))) & 1).astype(np.float32)


def normalise_protocol(value) -> str:
    s = str(value).strip().upper()
    if s in ("TCP", "6"):
        return "TCP"
    if s in ("UDP", "17"):
        return "UDP"
    if not s:
        raise ValueError("empty protocol field")
    return "OTHER"


def parse_time(value: str) -> tuple[float, str]:
    """Return (epoch seconds, format) where format is ``"epoch"`` or ``"datetime"``."""
    s = str(value).strip()
    try:
        return float(s), "epoch"
    except ValueError:
        pass
    try:
        dt = datetime.strptime(s, TIME_FORMAT).replace(tzinfo=timezone.utc)
    except ValueError:
        raise ValueError(f"unparseable timestamp {value!r}") from None
    return dt.timestamp(), "datetime"


def format_time(epoch: float, fmt: str) -> str:
    if fmt == "datetime":
        return datetime.fromtimestamp(round(epoch), tz=timezone.utc).strftime(TIME_FORMAT)
    return _fmt_float(epoch)


def _fmt_float(v: float) -> str:
    return "%.15g" % v


# --------------------------------------------------------------------------- schema

@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    integer: bool = False
    minimum: float | None = None
    decimals: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) < 2:
            raise SchemaError(f"attribute {self.name!r}: categorical needs at least 2 categories")

    @property
    def continuous(self) -> bool:
        return self.kind in ("continuous", "time-delta")


@dataclass(frozen=True)
class Column:
    """One modelled sub-attribute: an IP expands to four, everything else to one."""
    name: str
    attribute: str
    part: int
    head: str          # "mdn" or "softmax"
    cardinality: int   # 0 for mdn heads
    context: str       # "scalar", "index", "onehot" or "bits"
    offset: int
    width: int


ONEHOT_LIMIT = 16


def _expand(attr: Attribute, offset: int) -> list[Column]:
    if attr.continuous:
        return [Column(attr.name, attr.name, 0, "mdn", 0, "scalar", offset, 1)]
    if attr.kind == "ip":
        return [Column(f"{attr.name}_{i}", attr.name, i, "softmax", 256, "index", offset + i, 1)
                for i in range(4)]
    if attr.kind == "port":
        return [Column(attr.name, attr.name, 0, "softmax", N_PORT_CATEGORIES, "index", offset, 1)]
    if attr.kind == "flags":
        return [Column(attr.name, attr.name, 0, "softmax", N_FLAG_CATEGORIES, "bits", offset, 6)]
    c = len(attr.categories)
    if c <= ONEHOT_LIMIT:
        return [Column(attr.name, attr.name, 0, "softmax", c, "onehot", offset, c)]
    return [Column(attr.name, attr.name, 0, "softmax", c, "index", offset, 1)]


@dataclass
class AttributeSchema:
    attributes: tuple[Attribute, ...]
    generation_order: tuple[int, ...] = ()
    k: int = 10
    columns: tuple[Column, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.attributes = tuple(self.attributes)
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        if not self.generation_order:
            self.generation_order = tuple(range(len(self.attributes)))
        self.generation_order = tuple(int(i) for i in self.generation_order)
        if sorted(self.generation_order) != list(range(len(self.attributes))):
            raise SchemaError("generation_order must be a permutation of attribute indices")
        if self.k < 1:
            raise SchemaError("window size k must be >= 1")
        cols, offset = [], 0
        for attr in self.attributes:
            expanded = _expand(attr, offset)
            cols.extend(expanded)
            offset += sum(c.width for c in expanded)
        self.columns = tuple(cols)

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)

    def column_order(self) -> list[int]:
        """Column indices in generation order (sub-attributes keep their own order)."""
        by_attr = {a.name: [] for a in self.attributes}
        for i, c in enumerate(self.columns):
            by_attr[c.attribute].append(i)
        return [i for a in self.generation_order for i in by_attr[self.attributes[a].name]]

    def column_ranks(self) -> np.ndarray:
        ranks = np.empty(len(self.columns), dtype=np.int64)
        ranks[self.column_order()] = np.arange(len(self.columns))
        return ranks

    def is_netflow(self) -> bool:
        return tuple(self.names) == CANONICAL_COLUMNS and all(
            self.attribute(n).kind == k for n, k in
            (("te", "time-delta"), ("sa", "ip"), ("da", "ip"), ("sp", "port"), ("dp", "port"),
             ("flg", "flags")))

    # -- serialisation
    def to_dict(self) -> dict:
        attrs = []
        for a in self.attributes:
            d = {"name": a.name, "kind": a.kind}
            if a.categories:
                d["categories"] = list(a.categories)
            if a.integer:
                d["integer"] = True
            if a.minimum is not None:
                d["minimum"] = a.minimum
            if a.decimals is not None:
                d["decimals"] = a.decimals
            attrs.append(d)
        return {"attributes": attrs, "generation_order": list(self.generation_order), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        try:
            attrs = tuple(
                Attribute(a["name"], a["kind"], tuple(a.get("categories", ())), bool(a.get("integer", False)),
                          a.get("minimum"), a.get("decimals"))
                for a in d["attributes"]
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from None
        return cls(attrs, tuple(d.get("generation_order", ())), int(d.get("k", 10)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "AttributeSchema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None

    @classmethod
    def netflow(cls, k: int = 10, generation_order=()) -> "AttributeSchema":
        return cls(
            (
                Attribute("te", "time-delta", minimum=0.0),
                Attribute("td", "continuous", minimum=0.0, decimals=3),
                Attribute("sa", "ip"),
                Attribute("da", "ip"),
                Attribute("sp", "port"),
                Attribute("dp", "port"),
                Attribute("pr", "categorical", PROTOCOLS),
                Attribute("flg", "flags"),
                Attribute("pkt", "continuous", integer=True, minimum=1.0),
                Attribute("byt", "continuous", integer=True, minimum=1.0),
            ),
            tuple(generation_order),
            k,
        )


# --------------------------------------------------------------------------- CSV

def _parse_field(attr: Attribute, text: str):
    if attr.kind == "time-delta":
        return parse_time(text)
    if attr.kind == "continuous":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {text!r}")
        if attr.integer:
            if v != int(v):
                raise ValueError(f"expected an integer, got {text!r}")
            v = int(v)
        if attr.minimum is not None and v < attr.minimum:
            raise ValueError(f"{attr.name}={v} below minimum {attr.minimum}")
        return v
    if attr.kind == "ip":
        encode_ip(text)
        return text.strip()
    if attr.kind == "port":
        p = int(text)
        encode_port(p)
        return p
    if attr.kind == "flags":
        return index_to_flags(flags_to_index(text))
    if attr.name == "pr" and tuple(attr.categories) == PROTOCOLS:
        return normalise_protocol(text)
    s = text.strip()
    if s not in attr.categories:
        raise ValueError(f"{attr.name}: unknown category {s!r}")
    return s


@dataclass
class ParseReport:
    count: int = 0
    skipped: list = field(default_factory=list)   # (line, message)
    time_format: str = "epoch"


def read_frame(source, schema: AttributeSchema, on_error: str = "abort") -> tuple[pd.DataFrame, ParseReport]:
    """Parse a flow CSV into a frame sorted by the time attribute.

    ``source`` is a path, a text stream or a byte stream. Extra columns are
    ignored. ``on_error`` is ``"abort"`` (raise FlowParseError) or ``"skip"``.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError("on_error must be 'abort' or 'skip'")
    if isinstance(source, (str, Path)):
        fh = open(source, newline="", encoding="utf-8")
    elif isinstance(source, io.TextIOBase):
        fh = source
    else:
        fh = io.TextIOWrapper(source, encoding="utf-8", newline="")
    report = ParseReport()
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FlowParseError(1, "missing header row") from None
        missing = [a.name for a in schema.attributes if a.name not in header]
        if missing:
            raise FlowParseError(1, f"header lacks columns {missing}")
        pos = [header.index(a.name) for a in schema.attributes]
        data = {a.name: [] for a in schema.attributes}
        formats = set()
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                values = []
                for attr, p in zip(schema.attributes, pos):
                    v = _parse_field(attr, row[p])
                    if attr.kind == "time-delta":
                        v, fmt = v
                        formats.add(fmt)
                    values.append(v)
            except ValueError as exc:
                if on_error == "abort":
                    raise FlowParseError(line_no, str(exc)) from None
                report.skipped.append((line_no, str(exc)))
                log.warning("skipping line %d: %s", line_no, exc)
                continue
            for attr, v in zip(schema.attributes, values):
                data[attr.name].append(v)
    finally:
        if isinstance(source, (str, Path)):
            fh.close()
        elif isinstance(fh, io.TextIOWrapper) and fh is not source:
            fh.detach()
    if len(formats) > 1:
        raise FlowParseError(0, "mixed timestamp formats in one file")
    report.time_format = formats.pop() if formats else "epoch"
    frame = pd.DataFrame(data, columns=schema.names)
    for attr in schema.attributes:
        if attr.kind == "port" or (attr.kind == "continuous" and attr.integer):
            frame[attr.name] = frame[attr.name].astype(np.int64)
        elif attr.continuous:
            frame[attr.name] = frame[attr.name].astype(np.float64)
    tcol = time_attribute(schema)
    if tcol is not None and len(frame):
        frame = frame.sort_values(tcol, kind="stable").reset_index(drop=True)
    report.count = len(frame)
    return frame, report


def parse_flow_csv(source, schema: AttributeSchema | None = None, on_error: str = "abort") -> list[FlowRecord]:
    schema = schema or AttributeSchema.netflow()
    if not schema.is_netflow():
        raise SchemaError("parse_flow_csv needs the netflow schema; use read_frame for other schemas")
    frame, _ = read_frame(source, schema, on_error)
    return frame_to_records(frame)


def write_frame(frame: pd.DataFrame, dest, schema: AttributeSchema, time_format: str = "epoch"):
    """Write a frame as CSV in schema column order."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names)
        cols = []
        for attr in schema.attributes:
            values = frame[attr.name].tolist()
            if attr.kind == "time-delta":
                cols.append([format_time(v, time_format) for v in values])
            elif attr.kind == "continuous" and attr.integer:
                cols.append([str(int(v)) for v in values])
            elif attr.kind == "continuous":
                cols.append([_fmt_float(float(v)) for v in values])
            else:
                cols.append([str(v) for v in values])
        w.writerows(zip(*cols))
    finally:
        if own:
            fh.close()


def write_flow_csv(records: Sequence[FlowRecord], dest, time_format: str = "epoch"):
    write_frame(records_to_frame(records), dest, AttributeSchema.netflow(), time_format)


def time_attribute(schema: AttributeSchema) -> str | None:
    for a in schema.attributes:
        if a.kind == "time-delta":
            return a.name
    return None


def infer_schema(source, k: int = 10, max_categories: int = 64) -> AttributeSchema:
    """Guess a schema from a CSV header and its values.

    The canonical netflow columns get the netflow kinds; other columns
    become continuous when numeric and categorical otherwise. Columns with
    more than ``max_categories`` distinct strings are skipped.
    """
    df = pd.read_csv(source, dtype=str, keep_default_na=False)
    if set(CANONICAL_COLUMNS) <= set(df.columns):
        return AttributeSchema.netflow(k=k)
    attrs = []
    for name in df.columns:
        values = df[name].str.strip()
        numeric = pd.to_numeric(values, errors="coerce")
        if numeric.notna().all() and len(values):
            integer = bool((numeric == numeric.round()).all())
            attrs.append(Attribute(name, "continuous", integer=integer))
            continue
        try:
            for v in values.head(50):
                parse_time(v)
            attrs.append(Attribute(name, "time-delta", minimum=0.0))
            continue
        except ValueError:
            pass
        cats = tuple(sorted(values.unique()))
        if 2 <= len(cats) <= max_categories:
            attrs.append(Attribute(name, "categorical", cats))
        else:
            log.warning("skipping column %s (%d distinct values)", name, len(cats))
    if not attrs:
        raise SchemaError("no usable columns found")
    return AttributeSchema(tuple(attrs), (), k)


# --------------------------------------------------------------------------- scalers

@dataclass
class ScalerParams:
    mins: dict[str, float]
    maxs: dict[str, float]

    def scale(self, name: str, values) -> tuple[np.ndarray, int]:
        """Min-max scale; values outside the fitted range are clamped and counted."""
        v = np.asarray(values, dtype=np.float64)
        lo, hi = self.mins[name], self.maxs[name]
        if hi == lo:
            return np.zeros_like(v), int(np.count_nonzero(v != lo))
        s = (v - lo) / (hi - lo)
        outside = int(np.count_nonzero((s < 0) | (s > 1)))
        return np.clip(s, 0.0, 1.0), outside

    def unscale(self, name: str, scaled) -> np.ndarray:
        s = np.asarray(scaled, dtype=np.float64)
        lo, hi = self.mins[name], self.maxs[name]
        return lo + s * (hi - lo)

    def to_dict(self):
        return {"mins": self.mins, "maxs": self.maxs}

    @classmethod
    def from_dict(cls, d):
        return cls({k: float(v) for k, v in d["mins"].items()}, {k: float(v) for k, v in d["maxs"].items()})


def continuous_values(frame: pd.DataFrame, attr: Attribute, prev_time: float | None = None) -> np.ndarray:
    """Raw modelled values of a continuous attribute (time attributes become deltas)."""
    v = frame[attr.name].to_numpy(dtype=np.float64)
    if attr.kind != "time-delta":
        return v
    if not len(v):
        return v
    first = v[0] if prev_time is None else prev_time
    return np.diff(v, prepend=first)


def fit_scalers(data, schema: AttributeSchema | None = None) -> ScalerParams:
    """Observed min/max per continuous attribute (time attributes: of their deltas)."""
    schema = schema or AttributeSchema.netflow()
    frame = data if isinstance(data, pd.DataFrame) else records_to_frame(data)
    if len(frame) == 0:
        raise ValueError("cannot fit scalers on empty input")
    mins, maxs = {}, {}
    for attr in schema.attributes:
        if attr.continuous:
            v = continuous_values(frame, attr)
            mins[attr.name] = float(v.min())
            maxs[attr.name] = float(v.max())
    return ScalerParams(mins, maxs)


# --------------------------------------------------------------------------- codec

class Codec:
    """Frame <-> coded matrix <-> context rows for one schema and its scalers."""

    def __init__(self, schema: AttributeSchema, scalers: ScalerParams):
        self.schema = schema
        self.scalers = scalers
        self.clamped = 0

    @property
    def n_columns(self) -> int:
        return len(self.schema.columns)

    def encode(self, frame: pd.DataFrame, prev_time: float | None = None) -> np.ndarray:
        n = len(frame)
        coded = np.zeros((n, self.n_columns), dtype=np.float64)
        self.clamped = 0
        ci = 0
        for attr in self.schema.attributes:
            if attr.continuous:
                s, bad = self.scalers.scale(attr.name, continuous_values(frame, attr, prev_time))
                self.clamped += bad
                coded[:, ci] = s
                ci += 1
            elif attr.kind == "ip":
                octets = np.array([encode_ip(a) for a in frame[attr.name]], dtype=np.float64).reshape(n, 4)
                coded[:, ci:ci + 4] = octets
                ci += 4
            elif attr.kind == "port":
                coded[:, ci] = encode_ports(frame[attr.name].to_numpy())
                ci += 1
            elif attr.kind == "flags":
                coded[:, ci] = [flags_to_index(f) for f in frame[attr.name]]
                ci += 1
            else:
                lookup = {c: i for i, c in enumerate(attr.categories)}
                try:
                    coded[:, ci] = [lookup[v] for v in frame[attr.name]]
                except KeyError as exc:
                    raise SchemaError(f"{attr.name}: unknown category {exc}") from None
                ci += 1
        if self.clamped:
            log.warning("%d values fell outside the fitted scaler range and were clamped", self.clamped)
        return coded

    def context(self, coded: np.ndarray) -> np.ndarray:
        """Coded matrix (n, n_columns) -> context rows (n, W) float32."""
        n = coded.shape[0]
        out = np.zeros((n, self.schema.width), dtype=np.float32)
        for j, col in enumerate(self.schema.columns):
            v = coded[:, j]
            if col.context == "scalar":
                out[:, col.offset] = v
            elif col.context == "index":
                out[:, col.offset] = v / (col.cardinality - 1)
            elif col.context == "onehot":
                out[np.arange(n), col.offset + v.astype(np.int64)] = 1.0
            else:
                out[:, col.offset:col.offset + 6] = flag_bits(v)
        return out

    def context_value(self, j: int, value: float) -> np.ndarray:
        """Context slots of column ``j`` for a single coded value."""
        col = self.schema.columns[j]
        if col.context == "scalar":
            return np.array([value], dtype=np.float32)
        if col.context == "index":
            return np.array([value / (col.cardinality - 1)], dtype=np.float32)
        if col.context == "onehot":
            out = np.zeros(col.width, dtype=np.float32)
            out[int(value)] = 1.0
            return out
        return flag_bits([int(value)])[0]

    def decode(self, coded: np.ndarray, rng: np.random.Generator, start_time: float = 0.0) -> pd.DataFrame:
        """Coded matrix -> frame. Continuous values are clamped to [0, 1] first."""
        data = {}
        ci = 0
        for attr in self.schema.attributes:
            if attr.continuous:
                v = self.scalers.unscale(attr.name, np.clip(coded[:, ci], 0.0, 1.0))
                if attr.minimum is not None:
                    v = np.maximum(v, attr.minimum)
                if attr.integer:
                    v = np.rint(v).astype(np.int64)
                    if attr.minimum is not None:
                        v = np.maximum(v, int(math.ceil(attr.minimum)))
                elif attr.decimals is not None:
                    v = np.round(v, attr.decimals)
                if attr.kind == "time-delta":
                    v = start_time + np.cumsum(v)
                data[attr.name] = v
                ci += 1
            elif attr.kind == "ip":
                octets = coded[:, ci:ci + 4].astype(np.int64)
                data[attr.name] = [f"{a}.{b}.{c}.{d}" for a, b, c, d in octets.tolist()]
                ci += 4
            elif attr.kind == "port":
                data[attr.name] = decode_ports(coded[:, ci], rng)
                ci += 1
            elif attr.kind == "flags":
                data[attr.name] = [index_to_flags(i) for i in coded[:, ci].astype(np.int64)]
                ci += 1
            else:
                cats = np.array(attr.categories, dtype=object)
                data[attr.name] = cats[coded[:, ci].astype(np.int64)].tolist()
                ci += 1
        return pd.DataFrame(data, columns=self.schema.names)


def encode_record(r: FlowRecord, prev_te: float, schema: AttributeSchema, scalers: ScalerParams) -> np.ndarray:
    """One record -> its width-W context row (time attribute as a delta from ``prev_te``)."""
    if prev_te > r.te:
        raise ValueError("prev_te must not exceed the record timestamp")
    codec = Codec(schema, scalers)
    coded = codec.encode(records_to_frame([r]), prev_time=prev_te)
    return codec.context(coded)[0]


def decode_row(values: Sequence[float], schema: AttributeSchema, scalers: ScalerParams,
               prev_te: float, rng: np.random.Generator) -> FlowRecord:
    """One coded row (one value per column) -> FlowRecord with te = prev_te + delta."""
    codec = Codec(schema, scalers)
    frame = codec.decode(np.asarray(values, dtype=np.float64).reshape(1, -1), rng, start_time=prev_te)
    return frame_to_records(frame)[0]


# --------------------------------------------------------------------------- windows

def build_windows(rows: np.ndarray, k: int) -> np.ndarray:
    """Rows (n, W) -> windows (n, k + 1, W); window i holds rows i-k..i, zero rows before the start."""
    if k < 1:
        raise ValueError("window size k must be >= 1")
    rows = np.asarray(rows)
    n, w = rows.shape
    padded = np.zeros((n + k, w), dtype=rows.dtype)
    padded[k:] = rows
    if n == 0:
        return np.zeros((0, k + 1, w), dtype=rows.dtype)
    view = np.lib.stride_tricks.sliding_window_view(padded, (k + 1, w))[:, 0]
    return np.ascontiguousarray(view)
