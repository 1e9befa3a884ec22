"""Handcrafted flows with a known pass/fail pattern for the five rule tests."""
import pandas as pd

COLS = ["te", "td", "sa", "da", "sp", "dp", "pr", "flg", "pkt", "byt"]

# (sa, da, sp, dp, pr, flg, pkt, byt) and the first failing test expected for each row
RULE_FIXTURE = [
    (("85.201.196.53", "42.219.145.151", 19925, 80, "TCP", ".A..SF", 11, 11238), 0),
    (("42.219.144.10", "8.8.8.8", 5000, 53, "UDP", "......", 1, 70), 0),
    (("224.0.0.1", "42.219.144.10", 5353, 5353, "UDP", "......", 1, 100), 1),
    (("255.1.2.3", "1.2.3.4", 1000, 2000, "UDP", "......", 1, 50), 1),
    (("10.0.0.1", "0.1.2.3", 1000, 2000, "TCP", ".A....", 1, 40), 1),
    (("1.1.1.1", "2.2.2.2", 1000, 2000, "TCP", ".A....", 1, 39), 2),
    (("1.1.1.1", "2.2.2.2", 1000, 2000, "TCP", ".A....", 3, 100), 3),
    (("1.1.1.1", "2.2.2.2", 1000, 2000, "UDP", ".A....", 2, 100), 4),
    (("1.1.1.1", "2.2.2.2", 1000, 443, "UDP", "......", 2, 100), 5),
    (("1.1.1.1", "2.2.2.2", 80, 2000, "OTHER", "......", 1, 10), 5),
    (("1.1.1.1", "2.2.2.2", 0, 0, "OTHER", ".A....", 1, 20), 4),
    (("1.1.1.1", "2.2.2.2", 1000, 2000, "UDP", "......", 1, 70000), 3),
]
# test -> (evaluated, passed)
RULE_COUNTS = {1: (12, 9), 2: (12, 11), 3: (10, 7), 4: (8, 6), 5: (3, 1)}


def flows(rows):
    return pd.DataFrame([(1.4579e9 + i, 0.1) + r for i, r in enumerate(rows)], columns=COLS)


def rule_frame():
    return flows([r for r, _ in RULE_FIXTURE])
