"""Independent reference implementations and golden tables for the tests.

Nothing here imports the optimizer or the index internals: cc, depth and
best-source answers are recomputed from scratch so a shared bug cannot make
both sides agree.
"""

from __future__ import annotations

import random

import networkx as nx

# Golden rows of the ten-node overlay: node -> (in, out, hop_diff, forwarded, F1 parent, F2 parent); 0 is the source.
TABLE3 = {
    1: (2, 2, 1, "f1", 0, 2),
    2: (2, 3, 1, "f2", 1, 0),
    3: (2, 2, 0, "f1", 1, 2),
    4: (2, 2, 1, "f2", 3, 2),
    5: (2, 2, 0, "f1", 3, 4),
    6: (2, 2, 1, "f2", 5, 4),
    7: (2, 2, 0, "f1", 5, 6),
    8: (2, 1, 1, "f2", 7, 6),
    9: (2, 0, 0, "f1", 7, 8),
}
TABLE3_SOURCE_OUT = 2

# Golden buffer rows, fast feed 4 ahead, lag 1: t -> (fast head, slow head, playing, packets listed in the buffer)
TABLE1 = {
    0: (70, 66, 65, {66, 67, 68}),
    -1: (69, 65, 64, {65, 66, 67, 68}),
    -2: (68, 64, 63, {64, 65, 66, 67}),
    -3: (67, 63, 62, {63, 64, 65, 66}),
    -4: (66, 62, 61, {62, 63, 64, 65}),
    -5: (65, 61, 60, {61, 62, 63, 64}),
}


def digraph(parents: dict) -> nx.DiGraph:
    """Parent -> child edges from a child -> parent mapping."""
    g = nx.DiGraph()
    for child, parent in parents.items():
        if parent is not None:
            g.add_edge(parent, child)
    return g


def cc_oracle(parents: dict, root) -> dict:
    g = digraph(parents)
    g.add_node(root)
    return {v: len(nx.descendants(g, v)) for v in g.nodes}


def depth_oracle(parents: dict, root) -> dict:
    g = digraph(parents)
    g.add_node(root)
    return nx.single_source_shortest_path_length(g, root)


def total_depth_oracle(parents: dict, root) -> int:
    return sum(depth_oracle(parents, root).values())


def random_parents(n: int, rng: random.Random, max_children: int | None = None,
                   root_max: int | None = None) -> dict:
    """Random tree on 0..n-1 rooted at 0; optionally bounded fan-out."""
    parents = {0: None}
    kids = {0: 0}
    for v in range(1, n):
        while True:
            p = rng.randrange(v)
            limit = root_max if p == 0 and root_max is not None else max_children
            if limit is None or kids[p] < limit:
                break
        parents[v] = p
        kids[p] += 1
        kids[v] = 0
    return parents


def best_source_oracle(rows, feed: str, now: int, ttl: int, max_out: int, exclude=()) -> int | None:
    """Linear scan: least out-degree, then earliest registration, then lowest id.

    ``rows`` are plain tuples (peer, willing_feed, out_degree, registered_at,
    last_refresh, ineligible_until).
    """
    best = None
    for peer, willing, out, reg, refreshed, inel in rows:
        if willing != feed or peer in exclude or out >= max_out:
            continue
        if now - refreshed > ttl or (inel is not None and inel > now):
            continue
        key = (out, reg, peer)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def paths_disjoint(parents_f1: dict, parents_f2: dict, node, source) -> bool:
    """Brute force: walk both chains and intersect their interiors."""
    def chain(parents):
        out, cur = [], parents.get(node)
        while cur is not None and cur != source:
            out.append(cur)
            cur = parents.get(cur)
        return out
    return not (set(chain(parents_f1)) & set(chain(parents_f2)))
