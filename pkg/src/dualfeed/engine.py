"""Deterministic discrete-event engine for the dual-feed overlay.

Time is integer ticks. The source emits one packet per tick on each feed.
Events at the same tick run in phase order (control, then packet deliveries,
then playout) and, within a phase, in scheduling order, so a given config
always yields the same trace.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field

from . import node as proto
from .buffer import PlayoutBuffer
from .index import FEEDS, FeedId, IndexTable
from .node import NodeState
from .optimizer import Demotion, Promotion, Swap, depth_of, nearest_free, optimize_round, subtree
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

SOURCE = 0


class EventKind(enum.Enum):
    MESSAGE_DELIVERY = "MessageDelivery"
    NODE_JOIN = "NodeJoin"
    NODE_LEAVE = "NodeLeave"
    NODE_FAIL = "NodeFail"
    PLAYOUT_TICK = "PlayoutTick"
    HEARTBEAT_CHECK = "HeartbeatCheck"
    OPTIMIZER_ROUND = "OptimizerRound"
    INDEX_REFRESH = "IndexRefresh"
    RETRY = "Retry"
    SOURCE_EMIT = "SourceEmit"
    CC_REPORT_ROUND = "CcReportRound"


_PHASE = {
    EventKind.SOURCE_EMIT: 1,
    EventKind.MESSAGE_DELIVERY: 1,
    EventKind.PLAYOUT_TICK: 2,
}
_OBLIGATIONS = (EventKind.RETRY, EventKind.HEARTBEAT_CHECK)


@dataclass(frozen=True)
class Event:
    at: int
    seq_no: int
    kind: EventKind
    payload: tuple = ()


@dataclass
class NodeMetrics:
    hop_f1: int | None
    hop_f2: int | None
    hop_diff: int | None
    max_occupancy: int = 0
    underruns: int = 0


@dataclass
class FailureRecord:
    node: int
    fail_time: int
    feed: FeedId | None
    affected: set
    orphans: list
    detect_time: int | None = None
    reattached: dict = field(default_factory=dict)
    root_resume: dict = field(default_factory=dict)
    member_resume: dict = field(default_factory=dict)

    def _live_expected(self, nodes, ids):
        return [i for i in ids if nodes[i].alive]

    def summary(self, nodes) -> dict:
        if not self.affected:
            return dict(detect_time=self.fail_time, resume_time=self.fail_time,
                        full_resume_time=self.fail_time, recovery_time=0, affected_count=0)
        roots = self._live_expected(nodes, self.orphans)
        members = self._live_expected(nodes, self.affected)
        if not roots:
            # every orphan departed too; their subtrees belong to later failures
            return dict(detect_time=self.detect_time, resume_time=None, full_resume_time=None,
                        recovery_time=None, affected_count=len(self.affected), moot=True)
        resume = full = None
        if all(r in self.root_resume for r in roots):
            resume = max((self.root_resume[r] for r in roots), default=self.detect_time)
        if all(m in self.member_resume for m in members):
            full = max((self.member_resume[m] for m in members), default=resume)
        return dict(
            detect_time=self.detect_time,
            resume_time=resume,
            full_resume_time=full,
            recovery_time=None if resume is None else resume - self.fail_time,
            affected_count=len(self.affected),
        )


@dataclass
class Topology:
    source: int
    parent: dict      # feed -> {node: parent or None}
    children: dict    # feed -> {node: [children]}
    forwarded: dict   # node -> FeedId | None

    def nodes(self) -> list[int]:
        return sorted(self.forwarded)


@dataclass
class MetricsRecord:
    nodes: dict                 # node -> NodeMetrics
    failures: list              # dicts with failure_node, fail_time, ... affected_count
    out_degree_hist: dict
    hop_diff_hist: dict


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    topology: Topology
    metrics: MetricsRecord
    trace: list
    complete: bool
    problems: list


class Simulation:
    """One run of the overlay; owns every node, the index, and the event queue."""

    def __init__(self, cfg: ScenarioConfig, debug: bool = False):
        self.cfg = cfg
        self.debug = debug
        self.rng = random.Random(cfg.seed)
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self._epoch = 0
        self._pending_obligations = 0
        self.trace: list[dict] = []
        self._trace_seq = 0
        self.index = IndexTable(
            source_id=SOURCE,
            max_out_degree=cfg.max_out_degree,
            source_capacity=cfg.source_per_feed_capacity,
            refresh_ttl=cfg.refresh_ttl,
            hop_policy=cfg.hop_count_parent_policy,
        )
        src = NodeState(SOURCE, is_source=True, registered=True, joined_at=0)
        self.nodes: dict[int, NodeState] = {SOURCE: src}
        self.cc_dirty: set = set()
        # nodes whose children or child reports changed since the last optimizer round
        self.opt_touched: dict = {f: set() for f in FEEDS}
        self.failures: list[FailureRecord] = []
        self._failure_of: dict[int, FailureRecord] = {}
        self._pending_resume: dict = {}
        # (node, feed) -> first optimizer round seeing it over its cap
        self._over_cap: dict = {}
        self.cap_overdue: list = []
        self.observers: list = []
        self._schedule_initial()

    # -- scheduling ---------------------------------------------------------

    def schedule(self, at: int, kind: EventKind, *payload) -> Event:
        if at < self.now:
            raise ValueError(f"cannot schedule {kind} in the past ({at} < {self.now})")
        ev = Event(at, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._queue, (at, _PHASE.get(kind, 0), ev.seq_no, ev))
        if kind in _OBLIGATIONS:
            self._pending_obligations += 1
        return ev

    def schedule_retry(self, delay: int, action: str, node_id: int, feed: FeedId | None = None) -> None:
        self.schedule(self.now + delay, EventKind.RETRY, action, node_id, feed)

    def next_epoch(self) -> int:
        self._epoch += 1
        return self._epoch

    def log(self, kind: str, **fields) -> None:
        rec = {"at": self.now, "seq_no": self._trace_seq, "kind": kind}
        rec.update(fields)
        self._trace_seq += 1
        self.trace.append(rec)

    def _schedule_initial(self) -> None:
        cfg = self.cfg
        joins, leaves, fails = build_schedule(cfg, self.rng)
        for nid, at in joins:
            self.schedule(at, EventKind.NODE_JOIN, nid)
        for nid, at in leaves:
            self.schedule(at, EventKind.NODE_LEAVE, nid)
        for nid, at in fails:
            self.inject_failure(nid, at)
        self.schedule(cfg.refresh_period, EventKind.INDEX_REFRESH)
        if cfg.optimizer_period > 0:
            self.schedule(cfg.cc_report_period, EventKind.CC_REPORT_ROUND)
            self.schedule(cfg.optimizer_period, EventKind.OPTIMIZER_ROUND)
        if cfg.data_plane:
            self.schedule(0, EventKind.SOURCE_EMIT, 0)
            self.schedule(0, EventKind.PLAYOUT_TICK)

    def inject_failure(self, node_id: int, at: int) -> Event:
        """Schedule an abrupt failure; the node goes silent atomically at ``at``."""
        if node_id == SOURCE:
            raise ValueError("the source cannot be failed")
        if not 0 <= at <= self.cfg.horizon:
            raise ValueError(f"failure time {at} outside the horizon")
        return self.schedule(at, EventKind.NODE_FAIL, node_id)

    # -- main loop ----------------------------------------------------------

    def run(self, until: int | None = None) -> None:
        """Process every event with ``at <= until`` (default: the horizon)."""
        stop = self.cfg.horizon if until is None else min(until, self.cfg.horizon)
        queue = self._queue
        while queue and queue[0][0] <= stop:
            at, _, _, ev = heapq.heappop(queue)
            if ev.kind in _OBLIGATIONS:
                self._pending_obligations -= 1
            self.now = at
            self._dispatch(ev)
        self.now = max(self.now, stop)

    def _dispatch(self, ev: Event) -> None:
        k = ev.kind
        p = ev.payload
        if k is EventKind.MESSAGE_DELIVERY:
            self._on_delivery(*p)
        elif k is EventKind.SOURCE_EMIT:
            self._on_source_emit(p[0])
        elif k is EventKind.PLAYOUT_TICK:
            self._on_playout_tick()
        elif k is EventKind.NODE_JOIN:
            self._on_join(p[0])
        elif k is EventKind.NODE_LEAVE:
            n = self.nodes.get(p[0])
            if n is not None and n.alive:
                proto.leave_gracefully(self, n)
        elif k is EventKind.NODE_FAIL:
            self._on_fail(p[0])
        elif k is EventKind.HEARTBEAT_CHECK:
            self._on_heartbeat_check(*p)
        elif k is EventKind.RETRY:
            self._on_retry(*p)
        elif k is EventKind.INDEX_REFRESH:
            self._on_index_refresh()
        elif k is EventKind.CC_REPORT_ROUND:
            self._on_cc_round()
        elif k is EventKind.OPTIMIZER_ROUND:
            self._on_optimizer_round()
        for obs in self.observers:
            obs(self, ev)

    # -- handlers -----------------------------------------------------------

    def _on_join(self, nid: int) -> None:
        if nid in self.nodes:
            return
        buf = PlayoutBuffer(self.cfg.playout_lag) if self.cfg.data_plane else None
        node = NodeState(nid, buffer=buf)
        self.nodes[nid] = node
        self.log("join", node=nid)
        if self.cfg.index_latency > 0:
            node.joined_at = self.now
            self.schedule_retry(self.cfg.index_latency, "join", nid)
        else:
            proto.begin_join(self, node)

    def _on_retry(self, action: str, nid: int, feed: FeedId | None) -> None:
        node = self.nodes.get(nid)
        if node is None or not node.alive:
            return
        if action == "join":
            proto.begin_join(self, node)
        elif action == "poll":
            proto.poll_feed(self, node, feed)
        elif action == "reattach":
            proto.retry_reattach(self, node, feed)

    def _on_fail(self, nid: int) -> None:
        node = self.nodes.get(nid)
        if node is None or not node.alive:
            return
        feed = node.forwarded_feed
        orphans = [c for c in node.children[feed] if self.nodes[c].alive] if feed else []
        affected = set()
        for c in orphans:
            affected.update(proto.subtree_members(self, self.nodes[c], feed))
        node.alive = False
        self.index.silence(nid)
        self.on_depart(node)
        rec = FailureRecord(nid, self.now, feed, affected, orphans)
        self.failures.append(rec)
        self._failure_of[nid] = rec
        self.log("fail", node=nid, feed=str(feed) if feed else None, affected=sorted(affected))
        for c in orphans:
            self.schedule(self.now + self.cfg.failure_timeout, EventKind.HEARTBEAT_CHECK, "parent", c, feed, nid)
        for f in FEEDS:
            pid = node.parent[f]
            if pid is not None:
                self.schedule(self.now + self.cfg.child_timeout, EventKind.HEARTBEAT_CHECK, "child", pid, f, nid)

    def _on_heartbeat_check(self, role: str, nid: int, feed: FeedId, suspect: int) -> None:
        node = self.nodes.get(nid)
        if node is None or not node.alive:
            return
        if role == "child":
            if not self.nodes[suspect].alive:
                proto.prune_child(self, node, feed, suspect)
            return
        if node.parent[feed] != suspect:
            return
        if self.cfg.data_plane:
            last = node.last_heartbeat[feed]
            if last is not None and self.now - last < self.cfg.failure_timeout:
                self.schedule(last + self.cfg.failure_timeout, EventKind.HEARTBEAT_CHECK,
                              role, nid, feed, suspect)
                return
        if self.nodes[suspect].alive:
            return  # parent answers a probe: starvation is upstream
        proto.handle_parent_loss(self, node, feed, suspect)

    def _on_index_refresh(self) -> None:
        now = self.now
        for pid in self.index.refresh_all(now):
            self.log("expire", node=pid)
        nxt = now + self.cfg.refresh_period
        if nxt <= self.cfg.horizon:
            self.schedule(nxt, EventKind.INDEX_REFRESH)

    # data plane

    def _on_source_emit(self, seq: int) -> None:
        src = self.nodes[SOURCE]
        for feed in FEEDS:
            for c in src.children[feed]:
                self._send_packet(SOURCE, c, seq, feed, self.nodes[c].epoch[feed], (SOURCE,) if self.debug else None)
        if self.now + 1 <= self.cfg.horizon:
            self.schedule(self.now + 1, EventKind.SOURCE_EMIT, seq + 1)

    def _send_packet(self, frm, to, seq, feed, stamp, path) -> None:
        d = self.cfg.link.delay(frm, to, self.rng)
        self.schedule(self.now + d, EventKind.MESSAGE_DELIVERY, "data", frm, to, seq, feed, stamp, path)

    def _on_delivery(self, mtype, frm, to, *rest) -> None:
        node = self.nodes.get(to)
        if node is None or not node.alive:
            return
        if mtype == "cc":
            feed, value = rest
            if frm in node.children[feed]:
                table = node.child_cc[feed]
                change = value - table.get(frm, 0)
                table[frm] = value
                if change:
                    node.cc[feed] += change
                    self.cc_dirty.add((to, feed))
                    self.opt_touched[feed].add(to)
            return
        seq, feed, stamp, path = rest
        if self.debug:
            assert path[0] == SOURCE and path[-1] == frm, "packet without source provenance"
        relay = proto.on_data_packet(self, node, seq, feed)
        if self.cfg.trace_data:
            self.log("data", node=to, feed=str(feed), seq=seq, sender=frm)
        key = (to, feed)
        pending = self._pending_resume.get(key)
        if pending is not None and stamp >= pending[1] and node.parent[feed] is not None:
            rec = pending[0]
            rec.member_resume[to] = self.now
            if to in rec.orphans:
                rec.root_resume[to] = self.now
            del self._pending_resume[key]
            self.log("resume", node=to, feed=str(feed), failed=rec.node)
        if relay:
            out_path = path + (to,) if self.debug else None
            nodes = self.nodes
            for c in relay:
                # stamp with the link's attach epoch so post-repair packets are recognisable
                self._send_packet(to, c, seq, feed, max(stamp, nodes[c].epoch[feed]), out_path)

    def _on_playout_tick(self) -> None:
        for nid, node in self.nodes.items():
            if nid != SOURCE and node.alive and node.buffer is not None:
                node.buffer.tick()
        if self.now + 1 <= self.cfg.horizon:
            self.schedule(self.now + 1, EventKind.PLAYOUT_TICK)

    # cc aggregation and optimizer

    def _on_cc_round(self) -> None:
        f2 = FeedId.F2
        dirty = sorted(self.cc_dirty, key=lambda k: (k[0], k[1] is f2))
        self.cc_dirty = set()
        for nid, feed in dirty:
            node = self.nodes.get(nid)
            if node is None or not node.alive:
                continue
            value = node.cc[feed]  # kept current on every child change
            if self.debug:
                assert value == proto.recompute_cc(node, feed), f"cc drift at {nid}"
            pid = node.parent[feed]
            if pid is None or node.cc_sent[feed] == (pid, value):
                continue
            node.cc_sent[feed] = (pid, value)
            d = self.cfg.link.delay(nid, pid, self.rng)
            self.schedule(self.now + d, EventKind.MESSAGE_DELIVERY, "cc", nid, pid, feed, value)
        nxt = self.now + self.cfg.cc_report_period
        if nxt <= self.cfg.horizon:
            self.schedule(nxt, EventKind.CC_REPORT_ROUND)

    def _on_optimizer_round(self) -> None:
        for feed in FEEDS:
            view = OverlayView(self, feed)
            touched = self.opt_touched[feed]
            self.opt_touched[feed] = set()
            # a parent's moves depend only on its children and grandchildren,
            # so untouched regions would repeat last round's no-op
            active = set()
            for nid in touched:
                node = self.nodes.get(nid)
                if node is not None and node.alive:
                    active.add(nid)
                    if node.parent[feed] is not None:
                        active.add(node.parent[feed])
            order = sorted(active, key=lambda n: (view.depth(n), n))
            for act in optimize_round(view, skip=view.skip, order=order):
                self._log_action(act, feed)
            for nid in order:
                for act in self._relieve(view, feed, nid):
                    self._log_action(act, feed)
            for nid in order:
                if nid in view and len(view.children_of(nid)) > view.capacity(nid):
                    self.opt_touched[feed].add(nid)  # retry shedding next round
            self._track_over_cap(view, feed, order)
        nxt = self.now + self.cfg.optimizer_period
        if nxt <= self.cfg.horizon:
            self.schedule(nxt, EventKind.OPTIMIZER_ROUND)

    def _relieve(self, view, feed: FeedId, nid: int) -> list:
        """Bring an over-cap node back to its cap when in-subtree shedding failed.

        The subtree may hold only nodes relaying the other feed, or the node
        may be held and unable to act. Its lightest child then moves to the
        shallowest free slot anywhere in the tree, or failing that to an idle
        forwarder of the other feed switched over for the purpose (see
        :func:`proto.recruit_idle`). Feed purity keeps the two paths
        disjoint wherever the child lands; excluding its own subtree rules
        out loops. Held nodes take no children, so no protected subtree grows.
        """
        node = self.nodes.get(nid)
        if node is None or not node.alive:
            return []
        cap = proto.capacity(self, node, feed)
        acts = []
        kids = view.children_of(nid)
        while len(kids) > cap:
            victim = min(kids, key=lambda c: (view.cc(c), -c))
            here = depth_of(view, victim)
            if here is None:
                break  # cut off from the root; repair comes first
            avoid = set(subtree(view, victim)) | {nid, self.nodes[victim].parent[feed.other]}
            target = nearest_free(view, view.root, avoid, include_start=view.root not in avoid)
            if target is None:
                cand = proto.recruit_idle(self, feed, avoid, by=nid) or self.recruit_with_handoff(feed, avoid, nid)
                if cand is None:
                    break
                target = cand.id
            cc = view.cc(victim)
            delta = (cc + 1) * (depth_of(view, target) + 1 - here)
            view.move(victim, target)
            acts.append(Demotion(nid, victim, target, cc, delta))
            kids = view.children_of(nid)
        return acts

    def _feed_receivers(self, feed: FeedId) -> list:
        """Forwarders of the other feed fed ``feed`` over a settled chain, least loaded first."""
        now, nodes, index = self.now, self.nodes, self.index
        other = feed.other
        found = []
        stack = [SOURCE]
        while stack:
            nid = stack.pop()
            for c in nodes[nid].children[feed]:
                cn = nodes[c]
                if not cn.alive or cn.parent[feed] != nid:
                    continue
                if cn.recovering[feed] is not None or cn.held(feed, now):
                    continue
                rec = index.records.get(c)
                if rec is None or (rec.ineligible_until is not None and rec.ineligible_until > now):
                    continue
                if cn.forwarded_feed is other:
                    found.append(cn)
                elif cn.forwarded_feed is feed:
                    stack.append(c)
        return sorted(found, key=lambda n: (len(n.children[other]), n.id))

    def recruit_with_handoff(self, feed: FeedId, avoid, by: int):
        """Recruit a busy forwarder of the other feed after re-homing its children.

        Used when no idle forwarder qualifies. Each child moves, with its
        subtree, to the shallowest free slot of its tree outside that
        subtree; once none is left the candidate switches role exactly like
        an idle recruit.
        """
        other = feed.other
        view = OverlayView(self, other)
        for cand in self._feed_receivers(feed):
            if cand.id in avoid or cand.held(other, self.now) or cand.recovering[other] is not None:
                continue
            if depth_of(view, cand.id) is None:
                continue
            for kid in sorted(view.children_of(cand.id)):
                here = depth_of(view, kid)
                banned = set(subtree(view, kid)) | {cand.id, self.nodes[kid].parent[feed]}
                target = nearest_free(view, view.root, banned, include_start=view.root not in banned)
                if target is None:
                    break
                cc = view.cc(kid)
                delta = (cc + 1) * (depth_of(view, target) + 1 - here)
                view.move(kid, target)
                self._log_action(Demotion(cand.id, kid, target, cc, delta), other)
            if view.children_of(cand.id):
                continue
            cand.forwarded_feed = feed
            if cand.registered:
                self.index.publish(proto._record_for(self, cand), self.now)
            self.log("recruit", node=cand.id, feed=str(feed), by=by)
            return cand
        return None

    def _track_over_cap(self, view, feed: FeedId, order) -> None:
        """Note soft-cap overages that outlive two optimizer periods while rooted."""
        limit = 2 * self.cfg.optimizer_period
        keys = {k for k in self._over_cap if k[1] is feed} | {(n, feed) for n in order}
        for key in sorted(keys):
            nid = key[0]
            node = self.nodes[nid]
            over = node.alive and len(view.children_of(nid)) > proto.capacity(self, node, feed)
            if not over or depth_of(view, nid) is None:  # the clock runs only while rooted
                self._over_cap.pop(key, None)
                continue
            since = self._over_cap.setdefault(key, self.now)
            if self.now - since >= limit and (nid, str(feed), since) not in self.cap_overdue:
                self.cap_overdue.append((nid, str(feed), since))

    def _log_action(self, act, feed: FeedId) -> None:
        if isinstance(act, Promotion):
            self.log("promote", feed=str(feed), node=act.node, promoted=act.promoted,
                     from_parent=act.from_parent, cc=act.cc, depth_delta=act.depth_delta)
        elif isinstance(act, Swap):
            self.log("swap", feed=str(feed), node=act.node, displaced=act.displaced,
                     cc=act.cc, sibling_weight=act.sibling_weight, depth_delta=act.depth_delta)
        elif isinstance(act, Demotion):
            self.log("shed", feed=str(feed), node=act.node, demoted=act.demoted,
                     new_parent=act.new_parent, cc=act.cc, depth_delta=act.depth_delta)

    # -- hooks called by the protocol -----------------------------------------

    def on_detect(self, node: NodeState, feed: FeedId, failed: int) -> None:
        rec = self._failure_of.get(failed)
        if rec is not None and (rec.detect_time is None or self.now < rec.detect_time):
            rec.detect_time = self.now

    def on_attach(self, node: NodeState, feed: FeedId) -> None:
        rec_info = None
        for rec in reversed(self.failures):
            if node.id in rec.orphans and node.id not in rec.reattached and rec.feed is feed:
                rec_info = rec
                break
        if rec_info is None:
            return
        rec_info.reattached[node.id] = self.now
        members = [m for m in proto.subtree_members(self, node, feed) if m in rec_info.affected]
        if self.cfg.data_plane:
            for m in members:
                self._pending_resume[(m, feed)] = (rec_info, node.epoch[feed])
        else:
            rec_info.root_resume[node.id] = self.now
            for m in members:
                rec_info.member_resume.setdefault(m, self.now)

    def on_depart(self, node: NodeState) -> None:
        for f in FEEDS:
            self._pending_resume.pop((node.id, f), None)

    # -- inspection -----------------------------------------------------------

    def live_nodes(self) -> list[NodeState]:
        return [n for n in self.nodes.values() if n.alive]

    def is_quiescent(self) -> bool:
        if self._pending_obligations:
            return False
        return all(n.is_source or n.dual_fed for n in self.nodes.values() if n.alive)

    def topology(self) -> Topology:
        live = {nid: n for nid, n in self.nodes.items() if n.alive}
        parent = {f: {nid: n.parent[f] for nid, n in live.items() if nid != SOURCE} for f in FEEDS}
        children = {f: {nid: [c for c in n.children[f] if c in live] for nid, n in live.items()} for f in FEEDS}
        forwarded = {nid: n.forwarded_feed for nid, n in live.items() if nid != SOURCE}
        return Topology(SOURCE, parent, children, forwarded)

    def metrics(self) -> MetricsRecord:
        topo = self.topology()
        per_node, hist = hop_metrics(topo)
        for nid, m in per_node.items():
            buf = self.nodes[nid].buffer
            if buf is not None:
                m.max_occupancy = buf.max_occupancy
                m.underruns = buf.underruns
        out_hist = Counter(len(topo.children[n.forwarded_feed].get(nid, []))
                           for nid, n in self.nodes.items()
                           if n.alive and nid != SOURCE and n.forwarded_feed is not None)
        failures = []
        for rec in self.failures:
            row = {"failure_node": rec.node, "fail_time": rec.fail_time}
            row.update(rec.summary(self.nodes))
            failures.append(row)
        return MetricsRecord(per_node, failures, dict(sorted(out_hist.items())), hist)

    def result(self) -> ScenarioResult:
        metrics = self.metrics()
        problems = []
        unfed = sorted(n.id for n in self.nodes.values() if n.alive and not n.is_source and not n.dual_fed)
        if unfed:
            problems.append(f"nodes not dual-fed at horizon: {unfed}")
        cfg = self.cfg
        settle = cfg.failure_timeout + cfg.transition_duration + cfg.poll_interval
        for row in metrics.failures:
            if row["recovery_time"] is None and cfg.horizon - row["fail_time"] < settle:
                row["censored"] = True  # too close to the horizon to judge
            if row["recovery_time"] is None and not row.get("moot") and not row.get("censored"):
                problems.append(f"recovery from failure of node {row['failure_node']} unbounded")
        for nid, feed, since in self.cap_overdue:
            problems.append(f"node {nid} over its {feed} out-degree cap since t={since}")
        return ScenarioResult(self.cfg, self.topology(), metrics, self.trace, not problems, problems)


class OverlayView:
    """One feed tree of a running simulation, in the optimizer's tree protocol."""

    def __init__(self, sim: Simulation, feed: FeedId):
        self.sim = sim
        self.feed = feed
        self.root = SOURCE
        # parents still listing a dead child they have not pruned yet
        nodes = sim.nodes
        self._stale = {nodes[r.node].parent[feed] for r in sim.failures} - {None}
        self._depth: dict = {}

    def _node(self, nid) -> NodeState:
        return self.sim.nodes[nid]

    def __contains__(self, nid) -> bool:
        n = self.sim.nodes.get(nid)
        return n is not None and n.alive

    def __len__(self) -> int:
        return len(self.sim.nodes)

    def parent_of(self, nid):
        return self._node(nid).parent[self.feed]

    def children_of(self, nid) -> list:
        nodes, feed = self.sim.nodes, self.feed
        kids = nodes[nid].children[feed]
        if nid not in self._stale:
            return list(kids)
        return [c for c in kids if nodes[c].alive and nodes[c].parent[feed] == nid]

    def capacity(self, nid) -> int:
        node = self._node(nid)
        if node.held(self.feed, self.sim.now):
            return 0  # a held node takes no new children, not even from the optimizer
        return proto.capacity(self.sim, node, self.feed)

    def cc(self, nid) -> int:
        nodes, feed = self.sim.nodes, self.feed
        node = nodes[nid]
        pid = node.parent[feed]
        if pid is None:
            return node.cc[feed]
        return max(0, nodes[pid].child_cc[feed].get(nid, 0))

    def _meeting_point(self, a: int, b: int):
        """Lowest common ancestor of ``a`` and ``b``, found by stepping both upward."""
        feed, nodes = self.feed, self.sim.nodes
        seen_a, seen_b = {a}, {b}
        while True:
            if a in seen_b:
                return a
            if b in seen_a:
                return b
            pa = nodes[a].parent[feed] if a is not None else None
            pb = nodes[b].parent[feed] if b is not None else None
            if pa is None and pb is None:
                return None
            if pa is not None:
                a = pa
                seen_a.add(a)
            if pb is not None:
                b = pb
                seen_b.add(b)

    def _shift(self, start: NodeState, stop, delta: int) -> None:
        """Apply a subtree-size change to ``start`` and its ancestors below ``stop``.

        This is what the next report rounds would deliver; doing it with the
        move keeps later decisions in the same round from using stale sizes.
        """
        feed, nodes = self.feed, self.sim.nodes
        cur = start
        while cur.id != stop:
            cur.cc[feed] += delta
            proto.mark_cc_dirty(self.sim, cur, feed)
            pid = cur.parent[feed]
            if pid is None:
                return
            up = nodes[pid]
            table = up.child_cc[feed]
            table[cur.id] = table.get(cur.id, 0) + delta
            self.sim.opt_touched[feed].add(pid)
            cur = up

    def skip(self, nid) -> bool:
        until = self.sim.nodes[nid].hold_until[self.feed]
        if until is not None and until > self.sim.now:
            self.sim.opt_touched[self.feed].add(nid)  # revisit once the hold lapses
            return True
        return False

    def depth(self, nid) -> int:
        """Hops from the root, memoized for the lifetime of this view."""
        nodes, feed, memo = self.sim.nodes, self.feed, self._depth
        chain = []
        cur = nid
        while cur is not None and cur not in memo and nodes[cur].alive and len(chain) <= len(nodes):
            chain.append(cur)
            cur = nodes[cur].parent[feed]
        d = memo.get(cur, -1)  # a broken or dead-ended chain counts from zero
        for n in reversed(chain):
            d += 1
            memo[n] = d
        return memo.get(nid, 0)

    def move(self, nid, new_parent, index=None) -> None:
        sim, feed = self.sim, self.feed
        node = self._node(nid)
        old = self._node(node.parent[feed])
        newp = self._node(new_parent)
        reported = old.child_cc[feed].pop(nid, 0)
        old.children[feed].remove(nid)
        kids = newp.children[feed]
        if index is None:
            kids.append(nid)
        else:
            live = self.children_of(new_parent)
            kids.insert(kids.index(live[index]) if index < len(live) else len(kids), nid)
        newp.child_cc[feed][nid] = reported
        node.parent[feed] = new_parent
        node.grandparent[feed] = newp.parent[feed]
        for c in node.children[feed]:
            sim.nodes[c].grandparent[feed] = new_parent
        size = reported + 1  # may be stale, even negative; cc() clamps on read
        meet = self._meeting_point(old.id, newp.id)
        self._shift(old, meet, -size)
        self._shift(newp, meet, size)
        for n in (old, newp):
            proto.sync_index_out(sim, n)
        proto.mark_cc_dirty(sim, node, feed)
        if node.registered:
            sim.index.update(nid, sim.now, parent_f1=node.parent[FeedId.F1], parent_f2=node.parent[FeedId.F2])


# -- schedule construction ----------------------------------------------------

def build_schedule(cfg: ScenarioConfig, rng: random.Random):
    """Expand the config into (joins, leaves, failures) lists of (node, time)."""
    joins = []
    nid = 1
    for k in range(cfg.node_count - 1):
        joins.append((nid, cfg.join_start + k * cfg.join_interval))
        nid += 1
    for at in cfg.arrivals:
        joins.append((nid, at))
        nid += 1
    leaves = list(cfg.leaves)
    fails = list(cfg.failures)
    churn = cfg.churn
    if churn is not None and churn.arrivals > 0:
        until = min(churn.until, cfg.horizon) if churn.until is not None else cfg.horizon
        events = []
        t = float(churn.start)
        for _ in range(churn.arrivals):
            t += rng.expovariate(churn.arrival_rate)
            at = math.ceil(t)
            if at > until:
                break
            life = max(1, round(rng.expovariate(1.0 / churn.mean_lifetime)))
            abrupt = rng.random() < churn.fail_fraction
            events.append((at, 0, nid))
            if at + life <= until:
                events.append((at + life, 1 if abrupt else 2, nid))
            nid += 1
        events.sort()
        if churn.max_events is not None:
            events = events[: churn.max_events]
        for at, what, who in events:
            if what == 0:
                joins.append((who, at))
            elif what == 1:
                fails.append((who, at))
            else:
                leaves.append((who, at))
    return joins, leaves, fails


def hop_metrics(topo: Topology):
    """Per-node hop counts on both feeds and the hop-difference histogram.

    A node whose chain to the source is broken on a feed reports ``None`` for
    that feed and is left out of the histogram.
    """
    per_node = {}
    hist = Counter()
    for nid in topo.nodes():
        hops = {}
        for f in FEEDS:
            hops[f] = chain_length(topo, nid, f)
        h1, h2 = hops[FeedId.F1], hops[FeedId.F2]
        diff = abs(h1 - h2) if h1 is not None and h2 is not None else None
        per_node[nid] = NodeMetrics(h1, h2, diff)
        if diff is not None:
            hist[diff] += 1
    return per_node, dict(sorted(hist.items()))


def chain_length(topo: Topology, nid: int, feed: FeedId) -> int | None:
    parents = topo.parent[feed]
    n = 0
    cur = nid
    limit = len(parents) + 1
    while cur != topo.source:
        cur = parents.get(cur)
        n += 1
        if cur is None or n > limit:
            return None
    return n


def recovery_metrics(result_or_sim, failed_node: int) -> dict:
    """Detection, resumption and recovery time for the failure of ``failed_node``."""
    rows = result_or_sim.metrics.failures if isinstance(result_or_sim, ScenarioResult) \
        else result_or_sim.metrics().failures
    for row in rows:
        if row["failure_node"] == failed_node:
            return row
    raise KeyError(f"no failure of node {failed_node} in this run")


def run_scenario(cfg: ScenarioConfig, debug: bool = False) -> ScenarioResult:
    sim = Simulation(cfg.validate(), debug=debug)
    sim.run()
    return sim.result()
