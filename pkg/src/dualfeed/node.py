"""Per-node protocol: join, dual-feed reception, leave, and failure recovery.

Every function takes the owning simulation as its first argument. The
simulation provides ``now``, ``cfg``, ``nodes``, ``index``, ``log`` and
``schedule_retry``; control exchanges between nodes (attach requests, leave
notices, hold broadcasts) complete within the calling event, while data
packets and cc reports travel over links with latency.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .buffer import PlayoutBuffer
from .index import FEEDS, FeedId, PeerRecord


class Strategy(enum.Enum):
    """How an orphaned subtree is kept from serving its own feed during repair."""

    HOLD = "HOLD"            # subtree refuses feed requests for a while
    UNPUBLISH = "UNPUBLISH"  # subtree withdraws its adverts until re-fed
    INE = "INE"              # index tags the subtree ineligible for a while


@dataclass
class Recovery:
    failed: int
    since: int
    strategy: Strategy
    cause: str = "failure"


def _per_feed(value=None):
    return field(default_factory=lambda: {f: value for f in FEEDS})


@dataclass(eq=False)
class NodeState:
    id: int
    is_source: bool = False
    parent: dict = _per_feed()
    grandparent: dict = _per_feed()
    forwarded_feed: FeedId | None = None
    children: dict = field(default_factory=lambda: {f: [] for f in FEEDS})
    buffer: PlayoutBuffer | None = None
    registered: bool = False
    hold_until: dict = _per_feed()
    cc: dict = _per_feed(0)
    child_cc: dict = field(default_factory=lambda: {f: {} for f in FEEDS})
    cc_sent: dict = _per_feed()
    last_heartbeat: dict = _per_feed()
    epoch: dict = _per_feed(0)
    recovering: dict = _per_feed()
    alive: bool = True
    departed: bool = False
    joined_at: int | None = None
    anomalies: int = 0

    def out_degree(self, feed: FeedId | None = None) -> int:
        feed = feed or self.forwarded_feed
        return len(self.children[feed]) if feed is not None else 0

    @property
    def dual_fed(self) -> bool:
        return self.parent[FeedId.F1] is not None and self.parent[FeedId.F2] is not None

    def held(self, feed: FeedId, now: int) -> bool:
        until = self.hold_until[feed]
        return until is not None and until > now


# -- helpers ----------------------------------------------------------------

def subtree_members(sim, root: NodeState, feed: FeedId, through_dead: bool = False) -> list[int]:
    """Live nodes reachable from ``root`` over ``feed`` child links, root first.

    With ``through_dead`` the walk also crosses members that have failed but
    are still listed as parents (their children have not noticed yet); those
    children are part of the same subtree even though no data reaches them.
    """
    out = []
    seen = set()
    stack = [(root.id, None)]
    while stack:
        nid, via = stack.pop()
        node = sim.nodes.get(nid)
        if node is None or nid in seen:
            continue
        if via is not None and node.parent[feed] != via:
            continue  # stale child entry: it has moved on
        seen.add(nid)
        if node.alive:
            out.append(nid)
        elif not through_dead:
            continue
        stack.extend((c, nid) for c in reversed(node.children[feed]))
    return out


def capacity(sim, node: NodeState, feed: FeedId, recovery: bool = False) -> int:
    if node.is_source:
        cap = sim.cfg.source_per_feed_capacity
    elif node.forwarded_feed is feed:
        cap = sim.cfg.max_out_degree
    else:
        return 0
    return cap + (sim.cfg.soft_cap_extra if recovery else 0)


def sync_index_out(sim, node: NodeState) -> None:
    if node.is_source:
        for f in FEEDS:
            sim.index.set_source_out(f, len(node.children[f]))
    elif node.registered:
        sim.index.update(node.id, sim.now, out_degree=node.out_degree())


def _record_for(sim, node: NodeState) -> PeerRecord:
    return PeerRecord(
        peer_id=node.id,
        willing_feed=node.forwarded_feed,
        out_degree=node.out_degree(),
        parent_f1=node.parent[FeedId.F1],
        parent_f2=node.parent[FeedId.F2],
        registered_at=sim.now,
    )


def register(sim, node: NodeState) -> None:
    """Advertise ``node`` as a forwarder.

    The relayed feed is fixed at first registration: the index's balancing
    choice if both feeds are attached, otherwise the one feed the node has
    (a node never advertises a feed it does not receive).
    """
    if node.forwarded_feed is None:
        have = [f for f in FEEDS if node.parent[f] is not None]
        if not have:
            return
        node.forwarded_feed = sim.index.assign_forward_feed(sim.now) if len(have) == 2 else have[0]
    sim.index.publish(_record_for(sim, node), sim.now)
    node.registered = True
    sim.log("register", node=node.id, feed=str(node.forwarded_feed))


def unregister(sim, node: NodeState) -> None:
    sim.index.unpublish(node.id, sim.now)
    node.registered = False


def mark_cc_dirty(sim, node: NodeState, feed: FeedId) -> None:
    sim.cc_dirty.add((node.id, feed))
    sim.opt_touched[feed].add(node.id)


def recompute_cc(node: NodeState, feed: FeedId) -> int:
    node.cc[feed] = sum(node.child_cc[feed].get(c, 0) + 1 for c in node.children[feed])
    return node.cc[feed]


# -- attach / detach --------------------------------------------------------

def accept_request(sim, target: NodeState | None, requester: NodeState, feed: FeedId, recovery: bool):
    """Would ``target`` start relaying ``feed`` to ``requester`` now?"""
    if target is None or not target.alive:
        return False, "dead"
    if target.id == requester.id:
        return False, "self"
    if requester.parent[feed.other] == target.id:
        return False, "same-peer"
    if not target.is_source:
        if target.forwarded_feed is not feed:
            return False, "wrong-feed"
        if target.parent[feed] is None:
            return False, "unfed"
        if target.held(feed, sim.now):
            return False, "held"
    if len(target.children[feed]) >= capacity(sim, target, feed, recovery):
        return False, "full"
    return True, "ok"


def attach(sim, child: NodeState, feed: FeedId, parent: NodeState, reason: str) -> None:
    parent.children[feed].append(child.id)
    child.parent[feed] = parent.id
    child.grandparent[feed] = parent.parent[feed]
    for c in child.children[feed]:
        sim.nodes[c].grandparent[feed] = parent.id
    child.recovering[feed] = None
    child.epoch[feed] = sim.next_epoch()
    sync_index_out(sim, parent)
    if child.registered:
        sim.index.update(
            child.id, sim.now,
            parent_f1=child.parent[FeedId.F1], parent_f2=child.parent[FeedId.F2],
        )
    mark_cc_dirty(sim, child, feed)
    recompute_cc(parent, feed)
    mark_cc_dirty(sim, parent, feed)
    sim.log("attach", node=child.id, feed=str(feed), parent=parent.id, reason=reason)
    sim.on_attach(child, feed)


def detach(sim, child: NodeState, feed: FeedId) -> None:
    pid = child.parent[feed]
    child.parent[feed] = None
    parent = sim.nodes.get(pid)
    if parent is None or not parent.alive:
        return
    if child.id in parent.children[feed]:
        parent.children[feed].remove(child.id)
        parent.child_cc[feed].pop(child.id, None)
        recompute_cc(parent, feed)
        mark_cc_dirty(sim, parent, feed)
        sync_index_out(sim, parent)


def acquire_parent(sim, node: NodeState, feed: FeedId, recovery: bool = False) -> NodeState | None:
    """Query the index until some returned forwarder accepts, or none is left."""
    exclude = set()
    other = node.parent[feed.other]
    if other is not None:
        exclude.add(other)
    ranked = sim.index.ranked_sources(feed, node.id, sim.now, exclude)
    try:
        for rec in ranked:
            target = sim.nodes.get(rec.peer_id)
            ok, why = accept_request(sim, target, node, feed, recovery)
            if ok:
                return target
            sim.log("refused", node=node.id, feed=str(feed), target=rec.peer_id, why=why)
    finally:
        ranked.close()
    return recruit_forwarder(sim, node, feed)


def _serving_chain(sim, node: NodeState, feed: FeedId) -> bool:
    """True if ``node`` gets ``feed`` over live, settled, unprotected relays."""
    now = sim.now
    cur = node
    for _ in range(len(sim.nodes)):
        if cur.is_source:
            return True
        if not cur.alive or cur.recovering[feed] is not None or cur.held(feed, now):
            return False
        if cur is not node:
            rec = sim.index.records.get(cur.id)
            if rec is None or (rec.ineligible_until is not None and rec.ineligible_until > now):
                return False
        pid = cur.parent[feed]
        if pid is None:
            return False
        cur = sim.nodes[pid]
    return False


def _cut_off(sim, node: NodeState, feed: FeedId | None = None) -> bool:
    """True if ``feed`` (default: the relayed feed) does not reach ``node`` from the source.

    Such a node sits in a withdrawn subtree; it is re-advertised when the
    subtree root reattaches, not before.
    """
    if feed is None:
        feed = node.forwarded_feed
    if feed is None:
        return False
    cur = node
    for _ in range(len(sim.nodes)):
        if cur.is_source:
            return False
        if not cur.alive or cur.parent[feed] is None:
            return True
        cur = sim.nodes[cur.parent[feed]]
    return True


def recruit_forwarder(sim, node: NodeState, feed: FeedId) -> NodeState | None:
    """Switch an idle forwarder of the other feed over to ``feed``.

    Feed roles are fixed at registration, so churn can leave one feed with
    too few forwarders to seat everyone. A starving node then asks the index
    for a forwarder of the other feed that relays to nobody yet receives
    ``feed`` over a settled chain; that node changes role and serves it.
    It was a leaf in its old tree, so no path there runs through it and
    disjointness is kept. Only nodes with no ``feed`` children may recruit,
    which rules out attaching a subtree below one of its own members. When
    no idle forwarder qualifies, a busy one is recruited after its children
    are re-homed.
    """
    if node.children[feed]:
        return None
    avoid = {node.id, node.parent[feed.other]}
    return recruit_idle(sim, feed, avoid, by=node.id) or sim.recruit_with_handoff(feed, avoid, node.id)


def recruit_idle(sim, feed: FeedId, avoid, by: int) -> NodeState | None:
    """Switch the earliest suitable idle forwarder of the other feed to ``feed``."""
    for pid in sim.index.idle_forwarders(feed.other, sim.now):
        cand = sim.nodes.get(pid)
        if cand is None or pid in avoid:
            continue
        if cand.children[feed.other] or cand.children[feed] or not cand.registered:
            continue
        if not _serving_chain(sim, cand, feed):
            continue
        cand.forwarded_feed = feed
        sim.index.publish(_record_for(sim, cand), sim.now)
        sim.log("recruit", node=pid, feed=str(feed), by=by)
        return cand
    return None


# -- join -------------------------------------------------------------------

def begin_join(sim, node: NodeState) -> None:
    """Attach to one forwarder per feed and register as a forwarder.

    A feed with no available source is polled every ``poll_interval``; if
    neither feed is available the whole join is retried later.
    """
    if node.joined_at is None:
        node.joined_at = sim.now
    for feed in FEEDS:
        if node.parent[feed] is None:
            target = acquire_parent(sim, node, feed)
            if target is not None:
                attach(sim, node, feed, target, "join")
    if node.parent[FeedId.F1] is None and node.parent[FeedId.F2] is None:
        sim.log("join_retry", node=node.id)
        sim.schedule_retry(sim.cfg.poll_interval, "join", node.id)
        return
    if not node.registered and not _cut_off(sim, node):
        register(sim, node)
    for feed in FEEDS:
        if node.parent[feed] is None:
            sim.schedule_retry(sim.cfg.poll_interval, "poll", node.id, feed)


def poll_feed(sim, node: NodeState, feed: FeedId) -> None:
    if not node.alive or node.parent[feed] is not None:
        return
    target = acquire_parent(sim, node, feed)
    if target is None:
        sim.schedule_retry(sim.cfg.poll_interval, "poll", node.id, feed)
        return
    attach(sim, node, feed, target, "poll")
    if not node.registered and not _cut_off(sim, node):
        register(sim, node)


# -- data -------------------------------------------------------------------

def on_data_packet(sim, node: NodeState, seq: int, via: FeedId) -> list[int]:
    """Buffer a packet and return the children it must be relayed to."""
    if node.parent[via] is None and not node.is_source:
        node.anomalies += 1
        return []
    node.last_heartbeat[via] = sim.now
    if node.buffer is not None:
        node.buffer.receive(seq, via)
    if node.is_source or via is node.forwarded_feed:
        return list(node.children[via])
    return []


# -- leave ------------------------------------------------------------------

def leave_gracefully(sim, node: NodeState) -> list[int]:
    """Depart after warning the relayed subtree; returns the notified ids.

    The subtree withdraws its adverts, the node detaches from both parents,
    and each former child reattaches (grandparent first) and then lets its
    own subtree advertise again.
    """
    if node.is_source:
        raise ValueError("the source cannot leave")
    if not node.alive:
        return []
    feed = node.forwarded_feed
    kids = list(node.children[feed]) if feed is not None else []
    notified = []
    for k in kids:
        notified.extend(m for m in subtree_members(sim, sim.nodes[k], feed, through_dead=True)
                        if sim.nodes[m].forwarded_feed is feed)
    for m in notified:
        member = sim.nodes[m]
        if member.registered:
            unregister(sim, member)
    sim.log("leave", node=node.id, notified=sorted(notified))
    unregister(sim, node)
    for f in FEEDS:
        if node.parent[f] is not None:
            detach(sim, node, f)
    node.alive = False
    node.departed = True
    sim.on_depart(node)
    if feed is None:
        return notified
    for k in kids:
        child = sim.nodes[k]
        if not child.alive or child.parent[feed] != node.id:
            continue
        child.parent[feed] = None
        child.recovering[feed] = Recovery(node.id, sim.now, Strategy.UNPUBLISH, cause="leave")
        reattach_feed(sim, child, feed)
    node.children[feed] = []
    return notified


# -- failure recovery -------------------------------------------------------

def protect_subtree(sim, node: NodeState, feed: FeedId, failed: int | None, strategy: Strategy) -> list[int]:
    """Keep the orphaned subtree from serving ``feed`` while it is cut off."""
    until = sim.now + sim.cfg.transition_duration
    if strategy is Strategy.HOLD:
        members = subtree_members(sim, node, feed, through_dead=True)
        for m in members:
            mn = sim.nodes[m]
            if mn.hold_until[feed] is None or mn.hold_until[feed] < until:
                mn.hold_until[feed] = until
    elif strategy is Strategy.UNPUBLISH:
        # leaves relaying the other feed still advertise a working feed
        members = [m for m in subtree_members(sim, node, feed, through_dead=True)
                   if sim.nodes[m].forwarded_feed is feed]
        for m in members:
            mn = sim.nodes[m]
            if mn.registered:
                unregister(sim, mn)
        until = None
    else:
        ids = sim.index.subtree(node.id, feed) | {node.id}
        if failed is not None:
            ids |= sim.index.subtree(failed, feed)
            ids.discard(failed)
        ids = {i for i in ids if (r := sim.index.records.get(i)) is not None and r.willing_feed is feed}
        members = sim.index.mark_ineligible(ids, until)
    sim.log("protect", node=node.id, feed=str(feed), strategy=strategy.value,
            members=sorted(members), until=until)
    return members


def handle_parent_loss(sim, node: NodeState, feed: FeedId, failed: int) -> None:
    """React to a detected parent failure on ``feed``."""
    if not node.alive or node.parent[feed] != failed:
        return
    node.parent[feed] = None
    strategy = sim.cfg.strategy
    node.recovering[feed] = Recovery(failed, sim.now, strategy)
    sim.log("detect", node=node.id, feed=str(feed), failed=failed)
    sim.on_detect(node, feed, failed)
    protect_subtree(sim, node, feed, failed, strategy)
    if sim.cfg.index_latency > 0:
        sim.schedule_retry(sim.cfg.index_latency, "reattach", node.id, feed)
    else:
        reattach_feed(sim, node, feed)


def grandparent_redirect(sim, target: NodeState | None, requester: NodeState, feed: FeedId):
    """Answer a recovery request: ``("accept", id)``, ``("redirect", id)`` or ``("dead", None)``."""
    ok, why = accept_request(sim, target, requester, feed, recovery=True)
    if ok:
        return "accept", target.id
    if why == "dead":
        return "dead", None
    return "redirect", target.parent[feed]


def reattach_feed(sim, node: NodeState, feed: FeedId) -> int | None:
    """Find a new parent for ``feed``: recorded grandparent first, then the index."""
    if not node.alive or node.parent[feed] is not None:
        return None
    cand = node.grandparent[feed]
    hops = 0
    while cand is not None and hops <= sim.cfg.max_redirects:
        target = sim.nodes.get(cand)
        verdict, nxt = grandparent_redirect(sim, target, node, feed)
        if verdict == "accept":
            attach(sim, node, feed, target, "grandparent" if hops == 0 else "redirect")
            _after_reattach(sim, node, feed)
            return target.id
        if verdict == "dead":
            break
        sim.log("redirect", node=node.id, feed=str(feed), target=cand, to=nxt)
        cand = nxt
        hops += 1
    target = acquire_parent(sim, node, feed, recovery=True)
    if target is not None:
        attach(sim, node, feed, target, "index")
        _after_reattach(sim, node, feed)
        return target.id
    sim.log("reattach_retry", node=node.id, feed=str(feed))
    sim.schedule_retry(sim.cfg.poll_interval, "reattach", node.id, feed)
    return None


def retry_reattach(sim, node: NodeState, feed: FeedId) -> None:
    rec = node.recovering[feed]
    if not node.alive or node.parent[feed] is not None:
        return
    if rec is not None:
        protect_subtree(sim, node, feed, None, rec.strategy)
    reattach_feed(sim, node, feed)


def _after_reattach(sim, node: NodeState, feed: FeedId) -> None:
    """Top-down re-advertisement of a subtree that withdrew during repair."""
    if _cut_off(sim, node, feed):
        return  # reattached inside another orphaned subtree; its root republishes
    restored = []
    for m in subtree_members(sim, node, feed):
        mn = sim.nodes[m]
        if not mn.registered and mn.forwarded_feed is feed:
            sim.index.publish(_record_for(sim, mn), sim.now)
            mn.registered = True
            restored.append(m)
    if restored:
        sim.log("republish", node=node.id, feed=str(feed), members=restored)


def prune_child(sim, parent: NodeState, feed: FeedId, child_id: int) -> bool:
    if not parent.alive or child_id not in parent.children[feed]:
        return False
    parent.children[feed].remove(child_id)
    parent.child_cc[feed].pop(child_id, None)
    recompute_cc(parent, feed)
    mark_cc_dirty(sim, parent, feed)
    sync_index_out(sim, parent)
    sim.log("prune", node=parent.id, feed=str(feed), child=child_id)
    return True
