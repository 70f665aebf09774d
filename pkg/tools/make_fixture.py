"""Regenerate the bundled Manchester-area base-station fixture.

The public Sitefinder export is not redistributed here. This script builds
a synthetic stand-in with the published per-protocol totals inside the
10 km x 10 km study area (159 GSM, 255 UMTS, five operators), a denser
city core, mast sharing between partner operators, GSM/UMTS co-siting
and smaller transmit powers near the core. A handful of rows fall
outside the study area so clipping has something to do.

    python tools/make_fixture.py [--seed N] [--out PATH]
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from xl5g.geo_dataset import MANCHESTER_REGION, inverse_project  # noqa: E402
from xl5g.netmodel import PlanarPoint  # noqa: E402

CORE = (5130.0, 5600.0)  # city centre, metres from the south-west corner
CORE_SIGMA = 1200.0
CORE_SHARE = 0.7

GSM_COUNTS = {"O2": 42, "Orange": 38, "T-Mobile": 36, "Vodafone": 43}
UMTS_COUNTS = {"O2": 50, "Orange": 52, "Three": 58, "T-Mobile": 45, "Vodafone": 50}
# Operators that share masts.
PARTNER = {"O2": "Vodafone", "Vodafone": "O2", "T-Mobile": "Three", "Three": "T-Mobile"}

P_COSITE = 0.55  # UMTS station reuses one of the operator's GSM masts
P_SHARE = 0.30  # station reuses a partner operator's mast
P_SECOND = 0.05  # extra carrier entry on one of the operator's own masts of the same protocol
OUTSIDE_ROWS = 36

HEADER = ["Opref", "Operator", "Transtype", "Sitelat", "Sitelng", "Maxpwrdbm", "Freqband"]
FREQ = {"GSM": "900/1800", "UMTS": "2100", "TETRA": "380"}


def sample_site(rng, margin=30.0):
    w, h = MANCHESTER_REGION.width_m, MANCHESTER_REGION.height_m
    while True:
        if rng.random() < CORE_SHARE:
            x, y = rng.normal(CORE[0], CORE_SIGMA), rng.normal(CORE[1], CORE_SIGMA)
        else:
            x, y = rng.uniform(0, w), rng.uniform(0, h)
        if margin <= x < w - margin and margin <= y < h - margin:
            return x, y


def power_dbm(rng, protocol, x, y):
    base = 43.0 if protocol == "GSM" else 41.0
    d2 = (x - CORE[0]) ** 2 + (y - CORE[1]) ** 2
    core_drop = 4.0 * np.exp(-d2 / (2 * (0.8 * CORE_SIGMA) ** 2))
    return round(base - core_drop + rng.normal(0.0, 1.0), 1)


def build(seed: int) -> list:
    rng = np.random.default_rng(seed)
    masts = {op: [] for op in UMTS_COUNTS}  # operator -> [(x, y)]
    gsm_masts = {op: [] for op in GSM_COUNTS}
    rows = []

    own = {}  # (operator, protocol) -> masts already used

    def place(op, protocol):
        # shared masts keep identical coordinates, as co-sited entries do in the real export
        mine = own.setdefault((op, protocol), [])
        if mine and rng.random() < P_SECOND:
            x, y = mine[rng.integers(len(mine))]
        elif protocol == "UMTS" and gsm_masts.get(op) and rng.random() < P_COSITE:
            x, y = gsm_masts[op][rng.integers(len(gsm_masts[op]))]
        elif op in PARTNER and masts[PARTNER[op]] and rng.random() < P_SHARE:
            x, y = masts[PARTNER[op]][rng.integers(len(masts[PARTNER[op]]))]
        else:
            x, y = sample_site(rng)
        mine.append((x, y))
        masts[op].append((x, y))
        if protocol == "GSM":
            gsm_masts[op].append((x, y))
        return x, y

    for protocol, counts in (("GSM", GSM_COUNTS), ("UMTS", UMTS_COUNTS)):
        # interleave operators so mast sharing can go both ways
        queue = [op for op, n in counts.items() for _ in range(n)]
        rng.shuffle(queue)
        serial = {op: 0 for op in counts}
        for op in queue:
            x, y = place(op, protocol)
            serial[op] += 1
            rows.append([f"{op[:3].upper()}{protocol[0]}{serial[op]:04d}", op, protocol, x, y,
                         power_dbm(rng, protocol, x, y)])

    # rows just outside the study area, including a few TETRA sites
    ops = list(UMTS_COUNTS)
    for k in range(OUTSIDE_ROWS):
        side = k % 4
        off = rng.uniform(200, 3000)
        along = rng.uniform(-2000, 12000)
        x, y = {0: (-off, along), 1: (10000 + off, along), 2: (along, -off), 3: (along, 10000 + off)}[side]
        protocol = "TETRA" if k % 9 == 0 else ("GSM" if k % 3 == 0 else "UMTS")
        op = "Airwave" if protocol == "TETRA" else ops[k % len(ops)]
        rows.append([f"EXT{k:04d}", op, protocol, x, y, power_dbm(rng, "UMTS", x, y)])
    return rows


def write(rows, out: Path) -> None:
    origin = MANCHESTER_REGION.origin
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for rid, op, protocol, x, y, p in rows:
            geo = inverse_project(PlanarPoint(x, y), origin)
            w.writerow([rid, op, protocol, f"{geo.latitude_deg:.6f}", f"{geo.longitude_deg:.6f}",
                        f"{p:.1f}", FREQ[protocol]])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2015)
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src/xl5g/data/manchester_sitefinder.csv")
    args = ap.parse_args(argv)
    write(build(args.seed), args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
