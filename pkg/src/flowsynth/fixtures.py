"""Scripted stand-in for a day of ISP netflow.

The bundled ``data/sample_*.csv`` files are produced by this module; rerun
``python3 -m flowsynth.fixtures`` to regenerate them byte-identically.

The generator draws client/server sessions for a fixed population of 90
internal hosts. Each session emits a request flow and, most of the time, a
reply flow a moment later with ports and addresses swapped. Services,
packet sizes and TCP flag patterns follow fixed tables so the data carries
the byte/packet coupling, port/protocol coupling and request/reply timing a
generator should pick up.
"""
from __future__ import annotations

import argparse
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .schema import AttributeSchema, format_time

N_USERS = 90
N_SERVERS = 400
TRAIN_DAY = datetime(2016, 3, 14, tzinfo=timezone.utc)   # a Monday
TEST_DAY = datetime(2016, 3, 15, tzinfo=timezone.utc)

# (protocol, server port, weight, request flag patterns, reply flag patterns)
SERVICES = (
    ("TCP", 80, 0.34, (".AP.SF", ".A..SF", "....S."), (".AP.SF", ".A...F", ".A.R..")),
    ("TCP", 443, 0.28, (".AP.SF", ".A..SF"), (".AP.SF", ".A...F")),
    ("TCP", 25, 0.05, (".AP.SF",), (".AP.SF",)),
    ("TCP", 53, 0.02, (".AP.SF",), (".AP.SF",)),
    ("TCP", 110, 0.03, (".AP.SF",), (".AP.SF",)),
    ("TCP", 22, 0.03, (".AP.S.", ".AP.SF"), (".AP...",)),
    ("TCP", None, 0.03, ("....S.", ".A.R..", ".AP.SF"), (".A.R..", ".AP.SF")),
    ("UDP", 53, 0.12, ("......",), ("......",)),
    ("UDP", 123, 0.03, ("......",), ("......",)),
    ("UDP", 161, 0.03, ("......",), ("......",)),
    ("UDP", None, 0.02, ("......",), ("......",)),
    ("OTHER", 0, 0.02, ("......",), ("......",)),
)

# mean packets per flow and per-packet payload range by (protocol, direction)
PACKETS = {"TCP": (6.0, 3.0), "UDP": (1.3, 1.2), "OTHER": (1.5, 1.5)}
HEADER = {"TCP": 40, "UDP": 28, "OTHER": 28}
PAYLOAD = {"TCP": (0, 1460), "UDP": (20, 480), "OTHER": (0, 56)}
REPLY_PROB = 0.85
MULTICAST_SHARE = 0.008
EXTRA_COLUMNS = ("fwd", "stos")


def _users(rng) -> list[str]:
    hosts = rng.choice(np.arange(1, 4096), size=N_USERS, replace=False)
    return [f"42.219.{144 + h // 256}.{h % 256}" for h in hosts]


def _servers(rng) -> list[str]:
    out = set()
    while len(out) < N_SERVERS:
        a = int(rng.integers(1, 224))
        if a in (10, 42, 127):
            continue
        out.add(f"{a}.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}")
    return sorted(out)


def _rate_profile(seconds: np.ndarray) -> np.ndarray:
    """Diurnal intensity: quiet at night, busy in office hours."""
    hour = seconds / 3600.0
    return 0.25 + 0.75 * np.exp(-0.5 * ((hour - 14.0) / 4.0) ** 2)


def _session_times(n: int, rng) -> np.ndarray:
    grid = np.arange(86400.0)
    w = _rate_profile(grid)
    t = rng.choice(grid, size=n, p=w / w.sum()) + rng.random(n)
    return np.sort(t)


def _volume(proto: str, reply: bool, rng) -> tuple[int, int]:
    mean, spread = PACKETS[proto]
    pkt = 1 + int(rng.poisson(mean * (2.0 if reply and proto == "TCP" else 1.0) * rng.lognormal(0.0, 0.6) / spread))
    lo, hi = PAYLOAD[proto]
    if reply and proto == "TCP":
        lo = hi // 2
    per_packet = HEADER[proto] + rng.integers(lo, hi + 1, size=pkt)
    return pkt, int(per_packet.sum())


def make_day(sessions: int, day: datetime, seed: int) -> pd.DataFrame:
    """Flow table for one day; roughly ``1.85 * sessions`` rows, sorted by time."""
    rng = np.random.default_rng(seed)
    layout = np.random.default_rng(20160314)          # same hosts on every day
    users, servers = _users(layout), _servers(layout)
    popularity = 1.0 / np.arange(1, N_SERVERS + 1) ** 1.1
    popularity /= popularity.sum()
    activity = layout.pareto(1.2, N_USERS) + 0.2
    activity /= activity.sum()
    weights = np.array([s[2] for s in SERVICES])
    weights /= weights.sum()
    base = day.timestamp()
    rows = []
    for t in _session_times(sessions, rng):
        if rng.random() < MULTICAST_SHARE:
            src = users[rng.choice(N_USERS, p=activity)]
            pkt = int(rng.integers(1, 4))
            rows.append((t, 0.0, src, "224.0.0.251", 5353, 5353, "UDP", "......", pkt, pkt * int(rng.integers(60, 400))))
            continue
        proto, port, _, req_flags, rep_flags = SERVICES[rng.choice(len(SERVICES), p=weights)]
        user = users[rng.choice(N_USERS, p=activity)]
        server = servers[rng.choice(N_SERVERS, p=popularity)]
        if port is None:
            port = int(rng.integers(1024, 65536))
        eph = int(rng.integers(32768, 61000)) if proto != "OTHER" else 0
        pkt, byt = _volume(proto, False, rng)
        td = 0.0 if pkt == 1 else round(float(rng.lognormal(-1.0, 1.5)), 3)
        rows.append((t, td, user, server, eph, port, proto, req_flags[rng.integers(len(req_flags))], pkt, byt))
        if rng.random() < REPLY_PROB:
            pkt2, byt2 = _volume(proto, True, rng)
            td2 = 0.0 if pkt2 == 1 else round(td * float(rng.uniform(0.8, 1.0)), 3)
            lag = float(rng.exponential(0.05))
            rows.append((t + lag, td2, server, user, port, eph, proto, rep_flags[rng.integers(len(rep_flags))],
                         pkt2, byt2))
    frame = pd.DataFrame(rows, columns=list(AttributeSchema.netflow().names))
    frame["te"] = np.floor(base + frame["te"])
    frame = frame.sort_values("te", kind="stable").reset_index(drop=True)
    frame["fwd"] = 0
    frame["stos"] = 0
    return frame


def write_day(frame: pd.DataFrame, path):
    out = frame.copy()
    out["te"] = [format_time(v, "datetime") for v in out["te"]]
    out["td"] = [f"{v:.3f}" for v in out["td"]]
    out.to_csv(path, index=False, lineterminator="\n")


def sample_path(name: str) -> Path:
    """Path of a bundled CSV (``"train"`` or ``"test"``)."""
    return Path(str(resources.files("flowsynth") / "data" / f"sample_{name}.csv"))


def main(argv=None):
    ap = argparse.ArgumentParser(description="regenerate the bundled netflow sample")
    ap.add_argument("--out", type=Path, default=Path(__file__).parent / "data")
    ap.add_argument("--train-sessions", type=int, default=5400)
    ap.add_argument("--test-sessions", type=int, default=2700)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    write_day(make_day(args.train_sessions, TRAIN_DAY, 1), args.out / "sample_train.csv")
    write_day(make_day(args.test_sessions, TEST_DAY, 2), args.out / "sample_test.csv")


if __name__ == "__main__":
    main()
