"""Periodic latency optimization of a single feed tree.

Three local moves, all decided by a parent from the cumulative-children (cc)
counts its children report:

* fill: a node with a free slot adopts the heaviest grandchild,
* swap: a child whose cc outweighs all its siblings (each sibling counting
  ``cc + 1``) takes its parent's place,
* shed: a node left above its cap by recovery pushes its lightest child down
  to the nearest free slot in its own subtree.

Fill and swap strictly shrink the total depth of the tree; shed grows it and
only runs when a node is over its cap.

The functions here work on anything exposing the small tree protocol of
:class:`FeedTree` (``root``, ``parent_of``, ``children_of``, ``capacity``,
``move`` and a ``cc`` lookup). The simulator passes a live view of the overlay
whose ``cc`` answers from reported values instead of exact counts.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

log = logging.getLogger(__name__)


class FeedTree:
    """Plain rooted tree with per-node child capacity and exact cc values."""

    def __init__(self, root, max_out_degree: int = 3, capacities: dict | None = None):
        self.root = root
        self.max_out_degree = max_out_degree
        self.capacities = dict(capacities or {})
        self._parent = {root: None}
        self._children = {root: []}
        self._cc_cache: dict | None = None

    @classmethod
    def from_parents(cls, root, parents: dict, max_out_degree: int = 3, capacities=None) -> FeedTree:
        """Build from a child -> parent mapping; children keep ascending-id order."""
        tree = cls(root, max_out_degree, capacities)
        pending = dict(parents)
        pending.pop(root, None)
        placed = {root}
        while pending:
            ready = sorted(v for v, p in pending.items() if p in placed)
            if not ready:
                raise ValueError(f"parent map is not a tree rooted at {root!r}: {sorted(pending)}")
            for v in ready:
                tree.add(v, pending.pop(v))
                placed.add(v)
        return tree

    def add(self, node, parent) -> None:
        if node in self._parent:
            raise ValueError(f"{node!r} already in tree")
        if parent not in self._parent:
            raise KeyError(parent)
        self._parent[node] = parent
        self._children[node] = []
        self._children[parent].append(node)
        self._cc_cache = None

    # -- tree protocol ------------------------------------------------------

    def parent_of(self, node):
        return self._parent[node]

    def children_of(self, node) -> list:
        return self._children[node]

    def capacity(self, node) -> int:
        return self.capacities.get(node, self.max_out_degree)

    def move(self, node, new_parent, index: int | None = None) -> None:
        old = self._parent[node]
        self._children[old].remove(node)
        kids = self._children[new_parent]
        kids.append(node) if index is None else kids.insert(index, node)
        self._parent[node] = new_parent
        self._cc_cache = None

    def cc(self, node) -> int:
        if self._cc_cache is None:
            self._cc_cache = cc_table(self)
        return self._cc_cache[node]

    # -- helpers ------------------------------------------------------------

    def __contains__(self, node) -> bool:
        return node in self._parent

    def __len__(self) -> int:
        return len(self._parent)

    def nodes(self) -> list:
        return list(self._parent)

    def parents(self) -> dict:
        return {v: p for v, p in self._parent.items() if v != self.root}

    def depths(self) -> dict:
        return depths(self)

    def total_depth(self) -> int:
        return sum(depths(self).values())


@dataclass(frozen=True)
class Promotion:
    node: object        # the adopting grandparent
    promoted: object
    from_parent: object
    cc: int
    depth_delta: int


@dataclass(frozen=True)
class Swap:
    node: object        # the child that moves up
    displaced: object   # its former parent
    cc: int
    sibling_weight: int
    depth_delta: int


@dataclass(frozen=True)
class Demotion:
    node: object        # the over-cap parent
    demoted: object
    new_parent: object
    cc: int
    depth_delta: int


def _walk(tree, start):
    """Pre-order list of the subtree under ``start`` (inclusive)."""
    out = []
    stack = [start]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(reversed(tree.children_of(v)))
    return out


def subtree(tree, node) -> list:
    return _walk(tree, node)


def depths(tree) -> dict:
    d = {tree.root: 0}
    queue = deque([tree.root])
    while queue:
        v = queue.popleft()
        for c in tree.children_of(v):
            if c not in d:  # a cycle would otherwise spin forever
                d[c] = d[v] + 1
                queue.append(c)
    return d


def total_depth(tree) -> int:
    return sum(depths(tree).values())


def compute_cc(tree, node) -> int:
    """Number of nodes strictly below ``node``."""
    if node not in tree:
        raise KeyError(f"{node!r} is not in the tree")
    return len(_walk(tree, node)) - 1


def cc_table(tree) -> dict:
    """cc for every node, one post-order pass."""
    order = _walk(tree, tree.root)
    cc = {}
    for v in reversed(order):
        cc[v] = sum(cc[c] + 1 for c in tree.children_of(v))
    return cc


def aggregate_cc(tree, max_rounds: int | None = None) -> tuple[dict, int]:
    """Message-passing cc aggregation in synchronous rounds.

    Each node keeps the last value each child reported. In a round every node
    whose own value changed sends it to its parent; reports are read in the
    next round. Returns the per-node values at quiescence and the number of
    rounds in which at least one report was sent.
    """
    reports = {v: {} for v in tree.nodes()}
    current = {v: None for v in tree.nodes()}
    rounds = 0
    limit = max_rounds if max_rounds is not None else len(tree) + 1
    while rounds < limit:
        outbox = []
        for v in tree.nodes():
            val = sum(r + 1 for r in reports[v].values())
            if val != current[v]:
                current[v] = val
                p = tree.parent_of(v)
                if p is not None:
                    outbox.append((p, v, val))
        if not outbox:
            break
        for p, v, val in outbox:
            reports[p][v] = val
        rounds += 1
    return current, rounds


# -- the three moves ---------------------------------------------------------

def best_grandchild(tree, node):
    """Heaviest grandchild as (cc, child, grandchild); ties go to the lowest id."""
    offers = []
    for child in tree.children_of(node):
        kids = tree.children_of(child)
        if kids:
            top = min(kids, key=lambda g: (-tree.cc(g), g))
            offers.append((tree.cc(top), child, top))
    if not offers:
        return None
    return min(offers, key=lambda o: (-o[0], o[2]))


def fill_free_out_degree(tree, node) -> Promotion | None:
    if len(tree.children_of(node)) >= tree.capacity(node):
        return None
    offer = best_grandchild(tree, node)
    if offer is None:
        return None
    cc, child, grandchild = offer
    tree.move(grandchild, node)
    return Promotion(node, grandchild, child, cc, -(cc + 1))


def sibling_weight(tree, node) -> int:
    parent = tree.parent_of(node)
    return sum(tree.cc(s) + 1 for s in tree.children_of(parent) if s != node)


def swap_eligible(tree, node) -> bool:
    parent = tree.parent_of(node)
    if parent is None or parent == tree.root:
        return False
    return tree.cc(node) > sibling_weight(tree, node)


def execute_swap(tree, node) -> Swap | None:
    """Let ``node`` take its parent's slot; the parent keeps the other children.

    Returns None (and logs) when the node is not eligible or would exceed its
    cap after adopting its former parent.
    """
    if not swap_eligible(tree, node):
        return None
    if len(tree.children_of(node)) + 1 > tree.capacity(node):
        log.debug("swap of %s skipped: degree cap", node)
        return None
    parent = tree.parent_of(node)
    grand = tree.parent_of(parent)
    cc, weight = tree.cc(node), sibling_weight(tree, node)
    slot = tree.children_of(grand).index(parent)
    tree.move(node, grand, index=slot)
    tree.move(parent, node)
    return Swap(node, parent, cc, weight, weight - cc)


def shed_excess(tree, node) -> Demotion | None:
    """Move the lightest child of an over-cap node under the nearest free slot."""
    kids = tree.children_of(node)
    if len(kids) <= tree.capacity(node):
        return None
    for victim in sorted(kids, key=lambda c: (tree.cc(c), -c)):
        banned = set(_walk(tree, victim))
        target = nearest_free(tree, node, banned)
        if target is None:
            continue
        d = depths_below(tree, node)
        cc = tree.cc(victim)
        delta = (cc + 1) * (d[target] + 1 - d[victim])
        tree.move(victim, target)
        return Demotion(node, victim, target, cc, delta)
    return None


def depth_of(tree, v) -> int | None:
    """Hops from the root, or None if ``v`` does not reach it over live nodes."""
    n = 0
    while v != tree.root:
        if v is None or v not in tree:
            return None
        v = tree.parent_of(v)
        n += 1
        if n > len(tree):
            return None
    return n


def depths_below(tree, node) -> dict:
    d = {node: 0}
    queue = deque([node])
    while queue:
        v = queue.popleft()
        for c in tree.children_of(v):
            if c not in d:  # a cycle would otherwise spin forever
                d[c] = d[v] + 1
                queue.append(c)
    return d


def nearest_free(tree, node, banned, include_start=False):
    """Shallowest live node under ``node`` with a free slot, lowest id first.

    ``node`` itself is a candidate only with ``include_start``.
    """
    level = [node] if include_start else [c for c in tree.children_of(node) if c not in banned and c in tree]
    while level:
        free = [v for v in level if len(tree.children_of(v)) < tree.capacity(v)]
        if free:
            return min(free)
        level = [c for v in level for c in tree.children_of(v) if c not in banned and c in tree]
    return None


def optimize_round(tree, skip=None, order=None) -> list:
    """One optimizer round, top-down.

    Per parent: shed while over cap, fill while a slot is free and a
    grandchild exists, then at most one swap (eligible child with the largest
    cc, lowest id on ties). ``skip`` is an optional predicate for parents that
    must not act this round.

    By default every node is visited in breadth-first order, each at most
    once, when its parent (at that moment) has finished acting. Passing
    ``order`` restricts the round to that sequence of parents instead.
    """
    actions = []
    if order is not None:
        for p in order:
            if p in tree:
                _act(tree, p, skip, actions)
        return actions
    queue = deque([tree.root])
    seen = {tree.root}
    while queue:
        _enqueue(queue, seen, _act(tree, queue.popleft(), skip, actions))
    return actions


def _act(tree, p, skip, actions) -> list:
    """Let ``p`` act; returns the nodes to visit next (its children, plus a promoted child)."""
    children_of, capacity, cc = tree.children_of, tree.capacity, tree.cc
    kids = children_of(p)
    if not kids or (skip is not None and skip(p)):
        return kids  # leaves have nothing to shed, fill or swap
    cap = capacity(p)
    while len(kids) > cap:
        act = shed_excess(tree, p)
        if act is None:
            break
        actions.append(act)
        kids = children_of(p)
    while len(kids) < cap:
        act = fill_free_out_degree(tree, p)
        if act is None:
            break
        actions.append(act)
        kids = children_of(p)
    if p == tree.root or tree.parent_of(p) not in tree:
        return kids  # a swap needs a live grandparent to take the promoted child
    weights = [(cc(c), c) for c in kids]
    total = sum(w + 1 for w, _ in weights)
    # cc > total - (cc + 1) holds for at most the heaviest child
    eligible = [(-w, c) for w, c in weights if 2 * w + 1 > total]
    if eligible:
        pick = min(eligible)[1]
        if len(children_of(pick)) < capacity(pick):
            actions.append(execute_swap(tree, pick))
            # pick now holds p's old slot; its other children still need a visit
            return [pick] + children_of(p)
    return kids


def _enqueue(queue, seen, kids) -> None:
    for c in kids:
        if c not in seen:
            seen.add(c)
            queue.append(c)


def optimize(tree, max_rounds: int | None = None) -> list[list]:
    """Run rounds until one makes no move; returns the per-round action lists."""
    rounds = []
    limit = max_rounds if max_rounds is not None else len(tree)
    for _ in range(limit):
        acts = optimize_round(tree)
        rounds.append(acts)
        if not acts:
            break
    return rounds
