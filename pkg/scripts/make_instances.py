#!/usr/bin/env python3
"""Generate the vendored benchmark instances under data/.

Both instances are deterministic syntheses: the published benchmarks pin the
topology and the instance sizes (links, nodes, O-D pairs, paths), but not the
full fundamental-diagram parameters, trip tables, or path sets, so those are
constructed here with documented rules.

Nguyen: the classic 13-node / 19-link topology with its four O-D pairs.  The
full simple-path enumeration yields 25 paths; the single longest free-flow
path is dropped to match the 24-path benchmark path-set size (the drop is
recorded in a comment in paths.csv).

Sioux Falls: the classic 24-node / 76-link topology.  The trip table keeps,
for each origin, every destination except the farthest one by free-flow time
(24 x 22 = 528 pairs).  Demands follow a deterministic gravity rule.  Path
sets are k-shortest simple paths by free-flow time: 11 per O-D pair plus a
12th for the first 372 pairs in id order, totalling 6180.

Run from the repository root:  python3 scripts/make_instances.py
"""

from __future__ import annotations

import math
import sys
from itertools import islice
from pathlib import Path

import networkx as nx

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

V_FREE = 60.0  # km/h
W_BACK = 20.0  # km/h

# ---------------------------------------------------------------- Nguyen

NGUYEN_NODES = {
    "1": (0.0, 4.0), "2": (12.0, 4.0), "3": (10.0, 0.0), "4": (4.0, 6.0),
    "5": (4.0, 4.0), "6": (6.0, 4.0), "7": (8.0, 4.0), "8": (10.0, 4.0),
    "9": (4.0, 2.0), "10": (6.0, 2.0), "11": (8.0, 2.0), "12": (2.0, 2.0),
    "13": (4.0, 0.0),
}

NGUYEN_LINKS = [
    # id, tail, head, length_km
    ("1", "1", "5", 2.0),
    ("2", "1", "12", 2.5),
    ("3", "4", "5", 2.0),
    ("4", "4", "9", 2.5),
    ("5", "5", "6", 2.0),
    ("6", "5", "9", 2.0),
    ("7", "6", "7", 2.0),
    ("8", "6", "10", 2.0),
    ("9", "7", "8", 2.0),
    ("10", "7", "11", 2.0),
    ("11", "8", "2", 2.0),
    ("12", "9", "10", 2.0),
    ("13", "9", "13", 2.5),
    ("14", "10", "11", 2.0),
    ("15", "11", "2", 2.0),
    ("16", "11", "3", 2.0),
    ("17", "12", "6", 2.0),
    ("18", "12", "8", 3.0),
    ("19", "13", "3", 2.5),
]

# narrower central and feeder links act as bottlenecks
NGUYEN_NARROW = {"2", "4", "5", "7", "12", "14", "18"}

# Targets sit near the horizon end: the benchmark planning horizon is
# [0, 2] h, so late departures stay cheap enough for the equilibrium gap to
# resolve within the standard iteration budget.
NGUYEN_ODS = [
    # od_id, origin, dest, demand_veh, target_h
    ("w1", "1", "2", 2400.0, 1.80),
    ("w2", "1", "3", 1800.0, 1.85),
    ("w3", "4", "2", 1800.0, 1.80),
    ("w4", "4", "3", 1200.0, 1.85),
]

# ------------------------------------------------------------ Sioux Falls

SIOUX_EDGES = [
    (1, 2), (1, 3), (2, 1), (2, 6), (3, 1), (3, 4), (3, 12), (4, 3), (4, 5),
    (4, 11), (5, 4), (5, 6), (5, 9), (6, 2), (6, 5), (6, 8), (7, 8), (7, 18),
    (8, 6), (8, 7), (8, 9), (8, 16), (9, 5), (9, 8), (9, 10), (10, 9),
    (10, 11), (10, 15), (10, 16), (10, 17), (11, 4), (11, 10), (11, 12),
    (11, 14), (12, 3), (12, 11), (12, 13), (13, 12), (13, 24), (14, 11),
    (14, 15), (14, 23), (15, 10), (15, 14), (15, 19), (15, 22), (16, 8),
    (16, 10), (16, 17), (16, 18), (17, 10), (17, 16), (17, 19), (18, 7),
    (18, 16), (18, 20), (19, 15), (19, 17), (19, 20), (20, 18), (20, 19),
    (20, 21), (20, 22), (21, 20), (21, 22), (21, 24), (22, 15), (22, 20),
    (22, 21), (22, 23), (23, 14), (23, 22), (23, 24), (24, 13), (24, 21),
    (24, 23),
]

SIOUX_NODES = {
    1: (2.0, 14.0), 2: (8.0, 14.0), 3: (2.0, 12.0), 4: (4.0, 12.0),
    5: (6.0, 12.0), 6: (8.0, 12.0), 7: (10.0, 10.0), 8: (8.0, 10.0),
    9: (6.0, 10.0), 10: (6.0, 9.0), 11: (4.0, 9.0), 12: (2.0, 9.0),
    13: (2.0, 2.0), 14: (4.0, 6.5), 15: (6.0, 6.5), 16: (8.0, 9.0),
    17: (8.0, 7.0), 18: (10.0, 9.0), 19: (8.0, 5.5), 20: (8.0, 4.0),
    21: (6.0, 2.0), 22: (6.0, 4.0), 23: (4.0, 4.0), 24: (4.0, 2.0),
}


def write_instance(directory: Path, nodes, links, ods, paths, header_note=None):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "nodes.csv", "w", encoding="utf-8") as fh:
        fh.write("id,x,y\n")
        for nid, (x, y) in nodes.items():
            fh.write(f"{nid},{x!r},{y!r}\n")
    with open(directory / "links.csv", "w", encoding="utf-8") as fh:
        fh.write("# units: time=h distance=km\n")
        fh.write("id,from,to,length,vf,w,kjam,capacity\n")
        for lid, tail, head, length, kjam in links:
            cap = V_FREE * W_BACK * kjam / (V_FREE + W_BACK)
            fh.write(f"{lid},{tail},{head},{length!r},{V_FREE!r},{W_BACK!r},{kjam!r},{cap!r}\n")
    with open(directory / "od.csv", "w", encoding="utf-8") as fh:
        fh.write("# units: time=h\n")
        fh.write("od_id,origin,dest,demand,target_time\n")
        for od, o, d, q, tau in ods:
            fh.write(f"{od},{o},{d},{q!r},{tau!r}\n")
    with open(directory / "paths.csv", "w", encoding="utf-8") as fh:
        if header_note:
            fh.write(f"# {header_note}\n")
        fh.write("path_id,od_id,links\n")
        for pid, od, seq in paths:
            fh.write(",".join([pid, od] + list(seq)) + "\n")


def ff_time(links_by_id, seq):
    return sum(links_by_id[e][3] / V_FREE for e in seq)


def make_nguyen():
    links = [(lid, t, h, L, 120.0 if lid in NGUYEN_NARROW else 160.0)
             for lid, t, h, L in NGUYEN_LINKS]
    links_by_id = {l[0]: l for l in links}
    out_by_node: dict[str, list] = {}
    for lid, tail, head, _L, _k in links:
        out_by_node.setdefault(tail, []).append((lid, head))

    def all_paths(origin, dest):
        found = []

        def walk(at, seq, visited):
            if at == dest:
                found.append(tuple(seq))
                return
            for lid, nxt in sorted(out_by_node.get(at, []), key=lambda x: int(x[0])):
                if nxt not in visited:
                    walk(nxt, seq + [lid], visited | {nxt})

        walk(origin, [], {origin})
        return found

    enumerated = []
    for od, o, d, _q, _tau in NGUYEN_ODS:
        for seq in all_paths(o, d):
            enumerated.append((od, seq))
    assert len(enumerated) == 25, f"expected 25 enumerable paths, got {len(enumerated)}"

    dropped = max(enumerated, key=lambda item: (ff_time(links_by_id, item[1]), item[1]))
    kept = [item for item in enumerated if item != dropped]
    assert len(kept) == 24

    paths = [(f"p{idx:02d}", od, seq) for idx, (od, seq) in enumerate(kept, start=1)]
    note = (
        "complete simple-path enumeration (25 paths) minus the longest free-flow path "
        f"[{dropped[0]}: {'-'.join(dropped[1])}] to match the 24-path benchmark set"
    )
    write_instance(DATA / "nguyen", NGUYEN_NODES, links, NGUYEN_ODS, paths, note)
    print(f"nguyen: {len(NGUYEN_NODES)} nodes, {len(links)} links, {len(NGUYEN_ODS)} O-D pairs, {len(paths)} paths")


def make_sioux_falls():
    def dist(a, b):
        (x1, y1), (x2, y2) = SIOUX_NODES[a], SIOUX_NODES[b]
        return math.hypot(x1 - x2, y1 - y2)

    links = []
    for i, (tail, head) in enumerate(SIOUX_EDGES, start=1):
        length = round(max(1.5, 0.6 * dist(tail, head)), 1)
        kjam = 120.0 if (tail + head) % 2 == 1 else 160.0
        links.append((str(i), str(tail), str(head), length, kjam))
    assert len(links) == 76

    g = nx.DiGraph()
    for lid, tail, head, length, _k in links:
        g.add_edge(tail, head, weight=length / V_FREE, link=lid)

    sp_time = dict(nx.all_pairs_dijkstra_path_length(g, weight="weight"))

    ods = []
    for o in range(1, 25):
        dests = [d for d in range(1, 25) if d != o]
        farthest = max(dests, key=lambda d: (sp_time[str(o)][str(d)], d))
        for d in dests:
            if d == farthest:
                continue
            t = sp_time[str(o)][str(d)]
            demand = float(max(20, round(150.0 * math.exp(-3.0 * t))))
            tau = 1.0 + 0.1 * ((o + d) % 3 - 1)
            ods.append((f"w{o}_{d}", str(o), str(d), demand, tau))
    assert len(ods) == 528, len(ods)

    paths = []
    extra_quota = 6180 - 11 * len(ods)
    assert extra_quota == 372
    for idx, (od, o, d, _q, _tau) in enumerate(ods):
        k = 12 if idx < extra_quota else 11
        gen = nx.shortest_simple_paths(g, o, d, weight="weight")
        taken = list(islice(gen, k))
        assert len(taken) == k, f"{od}: only {len(taken)} simple paths"
        for j, node_seq in enumerate(taken, start=1):
            seq = tuple(g.edges[a, b]["link"] for a, b in zip(node_seq, node_seq[1:]))
            paths.append((f"{od}_k{j}", od, seq))
    assert len(paths) == 6180, len(paths)

    note = "k-shortest simple paths by free-flow time (11 or 12 per O-D pair)"
    nodes = {str(n): xy for n, xy in SIOUX_NODES.items()}
    write_instance(DATA / "siouxfalls", nodes, links, ods, paths, note)
    print(f"siouxfalls: {len(nodes)} nodes, {len(links)} links, {len(ods)} O-D pairs, {len(paths)} paths")


if __name__ == "__main__":
    make_nguyen()
    make_sioux_falls()
    print(f"instances written under {DATA}")
    sys.exit(0)
