"""Structural invariant checks over a topology snapshot.

Each check returns a list of human-readable violations; an empty list means
the invariant holds. They are cheap enough to run at every checkpoint of a
property test.
"""

from __future__ import annotations

from .engine import Topology
from .index import FEEDS, FeedId


def source_path(topo: Topology, nid: int, feed: FeedId) -> list | None:
    """Nodes from ``nid``'s parent up to the source, or None if broken or cyclic."""
    parents = topo.parent[feed]
    path = []
    seen = {nid}
    cur = parents.get(nid)
    while cur is not None:
        if cur in seen:
            return None
        path.append(cur)
        if cur == topo.source:
            return path
        seen.add(cur)
        cur = parents.get(cur)
    return None


def find_cycles(topo: Topology) -> list[str]:
    """Parent-chain cycles on either feed."""
    out = []
    for feed in FEEDS:
        parents = topo.parent[feed]
        done: set = set()
        for start in parents:
            chain = []
            on_chain = set()
            cur = start
            while cur is not None and cur not in done and cur != topo.source:
                if cur in on_chain:
                    loop = chain[chain.index(cur):]
                    out.append(f"{feed}: cycle {loop}")
                    break
                chain.append(cur)
                on_chain.add(cur)
                cur = parents.get(cur)
            done.update(chain)
    return out


def feed_purity(topo: Topology) -> list[str]:
    """No peer forwards a feed other than the one it is assigned."""
    out = []
    for feed in FEEDS:
        for nid, kids in topo.children[feed].items():
            if nid == topo.source or not kids:
                continue
            if topo.forwarded.get(nid) is not feed:
                out.append(f"node {nid} forwards {feed} to {kids} but is assigned {topo.forwarded.get(nid)}")
    return out


def disjointness(topo: Topology) -> list[str]:
    """Interior nodes of a dual-fed node's two source paths never overlap."""
    out = []
    for nid in topo.nodes():
        p1 = source_path(topo, nid, FeedId.F1)
        p2 = source_path(topo, nid, FeedId.F2)
        if p1 is None or p2 is None:
            continue
        shared = (set(p1) & set(p2)) - {topo.source}
        if shared:
            out.append(f"node {nid}: paths share {sorted(shared)}")
    return out


def playout_monotonic(played: list[int]) -> list[str]:
    """The player emits consecutive sequence numbers without repeats."""
    return [f"played {b} after {a}" for a, b in zip(played, played[1:]) if b != a + 1]


def all_violations(topo: Topology) -> list[str]:
    return find_cycles(topo) + feed_purity(topo) + disjointness(topo)
