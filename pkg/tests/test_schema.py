import io
import ipaddress

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsynth.schema import (N_PORT_CATEGORIES, AttributeSchema, Codec, FlowParseError, FlowRecord, SchemaError,
                              ScalerParams, build_windows, decode_ip, decode_port, decode_ports, decode_row,
                              encode_ip, encode_port, encode_ports, encode_record, fit_scalers, flag_bits,
                              flags_to_index, index_to_flags, infer_schema, parse_flow_csv, port_bin_range,
                              read_frame, records_to_frame, write_frame)

HEADER = "te,td,sa,da,sp,dp,pr,flg,pkt,byt\n"
ROW = "2016-03-14 10:00:00,0.52,85.201.196.53,42.219.145.151,19925,80,TCP,.A..SF,11,11238\n"


def test_reference_row_parses():
    (r,) = parse_flow_csv(io.StringIO(HEADER + ROW))
    assert (r.sa, r.da, r.sp, r.dp, r.pr, r.flg, r.pkt, r.byt) == (
        "85.201.196.53", "42.219.145.151", 19925, 80, "TCP", ".A..SF", 11, 11238)


def test_byte_stream_and_extra_columns():
    data = (HEADER.strip() + ",fwd\n" + ROW.strip() + ",0\n").encode()
    (r,) = parse_flow_csv(io.BytesIO(data))
    assert r.byt == 11238


def test_empty_file_with_header(netflow):
    frame, report = read_frame(io.StringIO(HEADER), netflow)
    assert len(frame) == 0 and report.count == 0


def test_bad_port_reports_line(netflow):
    bad = ROW.replace("19925", "70000")
    with pytest.raises(FlowParseError) as err:
        read_frame(io.StringIO(HEADER + ROW + bad), netflow)
    assert err.value.line == 3
    frame, report = read_frame(io.StringIO(HEADER + ROW + bad), netflow, on_error="skip")
    assert len(frame) == 1 and report.skipped[0][0] == 3


def test_rows_sorted_by_time(netflow):
    late = ROW.replace("10:00:00", "11:00:00").replace("11238", "999")
    frame, _ = read_frame(io.StringIO(HEADER + late + ROW), netflow)
    assert list(frame["byt"]) == [11238, 999]


def test_csv_round_trip(train_frame, netflow, tmp_path):
    write_frame(train_frame.iloc[:200], tmp_path / "a.csv", netflow, "datetime")
    back, report = read_frame(tmp_path / "a.csv", netflow)
    assert report.time_format == "datetime"
    pd.testing.assert_frame_equal(back, train_frame.iloc[:200].reset_index(drop=True))


def test_record_invariants():
    with pytest.raises(ValueError):
        FlowRecord(0.0, 0.0, "1.2.3.4", "1.2.3.4", 1, 1, "TCP", "......", 0, 10)
    with pytest.raises(ValueError):
        FlowRecord(0.0, -1.0, "1.2.3.4", "1.2.3.4", 1, 1, "TCP", "......", 1, 10)
    with pytest.raises(ValueError):
        FlowRecord(0.0, 0.0, "1.2.3.256", "1.2.3.4", 1, 1, "TCP", "......", 1, 10)


def test_port_codes():
    assert encode_port(80) == 80
    assert encode_port(1023) == 1023
    assert encode_port(1024) == 1024
    assert encode_port(19925) == 1213
    assert encode_port(65535) == N_PORT_CATEGORIES - 1
    assert port_bin_range(1669) == (65524, 65535)
    with pytest.raises(ValueError):
        encode_port(65536)


def test_port_brute_force(rng):
    ports = np.arange(65536)
    cats = encode_ports(ports)
    assert set(cats.tolist()) == set(range(N_PORT_CATEGORIES))
    back = decode_ports(cats, rng)
    assert np.array_equal(encode_ports(back), cats)
    assert np.array_equal(back[:1024], ports[:1024])
    for c in (0, 1023, 1024, 1500, 1669):
        lo, hi = port_bin_range(c)
        assert lo <= decode_port(c, rng) <= hi


def test_ip_round_trip(rng):
    for v in rng.integers(0, 2 ** 32, 10_000):
        addr = str(ipaddress.IPv4Address(int(v)))
        assert decode_ip(encode_ip(addr)) == addr
    for bad in ("1.2.3", "1.2.3.4.5", "a.b.c.d", "1.2.3.-1", "300.1.1.1"):
        with pytest.raises(ValueError):
            encode_ip(bad)


def test_flags():
    assert flags_to_index("......") == 0
    assert flags_to_index(".A..SF") == 0b010011
    assert flags_to_index("UAPRSF") == 63
    assert index_to_flags(19) == ".A..SF"
    assert flag_bits([19]).tolist() == [[0, 1, 0, 0, 1, 1]]
    with pytest.raises(ValueError):
        flags_to_index("XA..SF")


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_scale_round_trip(values):
    v = np.array(values)
    sp = ScalerParams({"a": float(v.min())}, {"a": float(v.max())})
    s, outside = sp.scale("a", v)
    assert outside == 0 and np.all((s >= 0) & (s <= 1))
    if v.max() > v.min():
        assert np.allclose(sp.unscale("a", s), v, rtol=1e-9, atol=1e-9 * (abs(v).max() + 1))


def test_fit_scalers_extrema(netflow):
    recs = [FlowRecord(10.0, 0.1, "1.1.1.1", "2.2.2.2", 1, 2, "TCP", "......", 1, b) for b in (40, 11238)]
    sc = fit_scalers(recs, netflow)
    assert (sc.mins["byt"], sc.maxs["byt"]) == (40, 11238)
    const = fit_scalers([recs[0]] * 3, netflow)
    s, _ = const.scale("byt", [40, 40])
    assert np.all(s == 0)
    with pytest.raises(ValueError):
        fit_scalers([], netflow)


def test_schema_expansion(netflow):
    assert len(netflow.columns) == 16
    assert netflow.width == 23
    assert [c.cardinality for c in netflow.columns if c.attribute == "sa"] == [256] * 4
    assert netflow.columns[netflow.column_index("dp")].cardinality == 1670


def test_schema_validation():
    base = AttributeSchema.netflow()
    with pytest.raises(SchemaError):
        AttributeSchema(base.attributes, (0, 0, 1, 2, 3, 4, 5, 6, 7, 8))
    with pytest.raises(SchemaError):
        AttributeSchema(base.attributes, (), 0)


def test_schema_save_load(netflow, tmp_path):
    netflow.save(tmp_path / "s.json")
    assert AttributeSchema.load(tmp_path / "s.json") == netflow


def test_infer_schema(tmp_path):
    assert infer_schema(io.StringIO(HEADER + ROW)).is_netflow()
    (tmp_path / "t.csv").write_text("a,b,c\n1,x,2016-03-14 10:00:00\n2.5,y,2016-03-14 10:00:01\n")
    s = infer_schema(tmp_path / "t.csv")
    assert [(a.name, a.kind) for a in s.attributes] == [("a", "continuous"), ("b", "categorical"),
                                                         ("c", "time-delta")]


def test_codec_round_trip(train_frame, netflow, rng):
    frame = train_frame.iloc[:300].reset_index(drop=True)
    codec = Codec(netflow, fit_scalers(frame, netflow))
    coded = codec.encode(frame)
    back = codec.decode(coded, rng, start_time=frame["te"].iloc[0])
    for col in ("sa", "da", "pr", "flg", "pkt", "byt"):
        assert back[col].tolist() == frame[col].tolist()
    assert np.allclose(back["te"], frame["te"])
    assert np.allclose(back["td"], frame["td"], atol=1e-9)
    assert np.array_equal(encode_ports(back["sp"]), encode_ports(frame["sp"]))
    ctx = codec.context(coded)
    assert ctx.shape == (300, 23) and ctx.dtype == np.float32
    assert np.all((ctx >= 0) & (ctx <= 1))


def test_record_helpers(train_frame, netflow, rng):
    frame = train_frame.iloc[:50]
    sc = fit_scalers(frame, netflow)
    r = FlowRecord(frame["te"].iloc[5], 0.1, "10.0.0.1", "10.0.0.2", 443, 50000, "TCP", ".AP.SF", 3, 900)
    row = encode_record(r, frame["te"].iloc[4], netflow, sc)
    assert row.shape == (23,)
    codec = Codec(netflow, sc)
    coded = codec.encode(records_to_frame([r]), prev_time=frame["te"].iloc[4])
    back = decode_row(coded[0], netflow, sc, frame["te"].iloc[4], rng)
    assert (back.sa, back.sp, back.flg, back.pr) == (r.sa, r.sp, r.flg, r.pr)
    assert encode_port(back.dp) == encode_port(r.dp)
    with pytest.raises(ValueError):
        encode_record(r, r.te + 1, netflow, sc)


def test_windows_padding():
    rows = np.arange(1, 7, dtype=np.float32).reshape(3, 2)
    w = build_windows(rows, 2)
    assert w.shape == (3, 3, 2)
    assert np.all(w[0, :2] == 0) and np.array_equal(w[0, 2], rows[0])
    assert np.array_equal(w[2], rows)
    assert build_windows(np.zeros((0, 2)), 3).shape == (0, 4, 2)


@settings(max_examples=30)
@given(st.integers(1, 40), st.integers(1, 12))
def test_windows_property(n, k):
    rows = np.random.default_rng(n).random((n, 3))
    w = build_windows(rows, k)
    for i in range(n):
        for r in range(k + 1):
            src = i - k + r
            expect = rows[src] if src >= 0 else np.zeros(3)
            assert np.array_equal(w[i, r], expect)
