"""Forwarder directory: which peers are willing to relay which feed.

The index stands in for either a central indexing server or a distributed
query network. It stores one soft-state row per registered peer and answers
"best source for feed X" queries. The stream source is implicit and always
present as a forwarder of both feeds, limited by its per-feed capacity.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
from dataclasses import dataclass


class FeedId(enum.Enum):
    F1 = "f1"
    F2 = "f2"

    @property
    def other(self) -> FeedId:
        return FeedId.F2 if self is FeedId.F1 else FeedId.F1

    def __str__(self) -> str:
        return self.value

    # members are singletons; identity hashing keeps hot dict lookups cheap
    __hash__ = object.__hash__


FEEDS = (FeedId.F1, FeedId.F2)


class NoSourceAvailable(LookupError):
    """No eligible forwarder exists for the requested feed."""


@dataclass
class PeerRecord:
    peer_id: int
    willing_feed: FeedId | None = None
    out_degree: int = 0
    parent_f1: int | None = None
    parent_f2: int | None = None
    registered_at: int = 0
    ineligible_until: int | None = None
    last_refresh: int = 0

    def parent(self, feed: FeedId) -> int | None:
        return self.parent_f1 if feed is FeedId.F1 else self.parent_f2


class IndexTable:
    """Soft-state forwarder index.

    Eligibility of a row for a feed query at time ``now``:

    * ``willing_feed`` matches the feed,
    * ``out_degree < max_out_degree``,
    * no INE tag active (``ineligible_until`` is absent or ``<= now``),
    * refreshed within ``refresh_ttl``,
    * not the requester.

    Selection is least out-degree, then earliest registration, then lowest id.
    Rows that have aged past ``refresh_ttl`` are dropped when a query meets them.
    """

    def __init__(
        self,
        source_id: int = 0,
        max_out_degree: int = 3,
        source_capacity: int = 1,
        refresh_ttl: int = 10,
        hop_policy: bool = False,
    ):
        if max_out_degree < 1 or source_capacity < 1 or refresh_ttl <= 0:
            raise ValueError("capacities and refresh_ttl must be positive")
        self.source_id = source_id
        self.max_out_degree = max_out_degree
        self.source_capacity = source_capacity
        self.refresh_ttl = refresh_ttl
        self.hop_policy = hop_policy
        self.records: dict[int, PeerRecord] = {}
        self.source_out = {FeedId.F1: 0, FeedId.F2: 0}
        # lazy-deletion heaps of (out_degree, registered_at, peer_id)
        self._heaps: dict[FeedId, list[tuple[int, int, int]]] = {f: [] for f in FEEDS}
        # parent -> children per feed, mirrors the parent columns of the rows
        self._kids: dict[FeedId, dict[int, set[int]]] = {f: {} for f in FEEDS}
        self._willing = {f: 0 for f in FEEDS}
        # rows relaying nothing yet, per willing feed; candidates for a role switch
        self._idle: dict[FeedId, set[int]] = {f: set() for f in FEEDS}
        # bulk refresh: rows count as refreshed at ``_swept`` unless silenced
        self._swept: int | None = None
        self._silent: set[int] = set()
        # INE tags outlive an unpublish, so a withdraw-and-republish inside
        # the window cannot launder a tagged peer
        self._tags: dict[int, int] = {}

    # -- mutation -----------------------------------------------------------

    def publish(self, record: PeerRecord, now: int) -> None:
        """Upsert ``record``; keeps the earlier registration time and any INE tag."""
        if record.peer_id == self.source_id:
            raise ValueError("the source is implicit and cannot be published")
        old = self.records.get(record.peer_id)
        rec = PeerRecord(
            peer_id=record.peer_id,
            willing_feed=record.willing_feed,
            out_degree=max(0, record.out_degree),
            parent_f1=record.parent_f1,
            parent_f2=record.parent_f2,
            registered_at=record.registered_at,
            ineligible_until=record.ineligible_until,
            last_refresh=now,
        )
        kept = self._tags.get(rec.peer_id)
        if kept is not None:
            if kept > now:
                rec.ineligible_until = max(kept, rec.ineligible_until or kept)
            else:
                del self._tags[rec.peer_id]
        same_key = False
        if old is not None:
            rec.registered_at = old.registered_at
            if old.ineligible_until is not None:
                rec.ineligible_until = max(old.ineligible_until, rec.ineligible_until or old.ineligible_until)
            same_key = old.willing_feed is rec.willing_feed and old.out_degree == rec.out_degree
            self._unlink(old)
        self.records[rec.peer_id] = rec
        self._link(rec)
        if not same_key:
            self._push(rec)

    def unpublish(self, peer_id: int, now: int | None = None) -> None:
        rec = self.records.pop(peer_id, None)
        self._silent.discard(peer_id)
        if rec is not None:
            self._unlink(rec)

    def update(self, peer_id: int, now: int, **changes) -> None:
        """Partial republish of an existing row; no-op when absent."""
        rec = self.records.get(peer_id)
        if rec is None or all(getattr(rec, k) == v for k, v in changes.items()):
            return
        if changes.get("peer_id", peer_id) != peer_id:
            raise ValueError("peer_id cannot change")
        # same merge rules as publish, applied in place
        key = (rec.willing_feed, rec.out_degree)
        self._unlink(rec)
        for k, v in changes.items():
            if k == "out_degree":
                v = max(0, v)
            elif k == "ineligible_until" and rec.ineligible_until is not None:
                v = max(rec.ineligible_until, v if v is not None else rec.ineligible_until)
            elif k in ("registered_at", "last_refresh"):
                continue
            setattr(rec, k, v)
        rec.last_refresh = now
        self._link(rec)
        if (rec.willing_feed, rec.out_degree) != key:
            self._push(rec)

    def mark_ineligible(self, peer_ids, until: int) -> list[int]:
        """Apply the INE tag; returns the ids actually present."""
        marked = []
        for pid in sorted(peer_ids):
            rec = self.records.get(pid)
            if rec is None:
                continue
            if rec.ineligible_until is None or until > rec.ineligible_until:
                rec.ineligible_until = until
            self._tags[pid] = rec.ineligible_until
            marked.append(pid)
        return marked

    def refresh(self, peer_id: int, now: int) -> None:
        rec = self.records.get(peer_id)
        if rec is not None:
            rec.last_refresh = now

    def refreshed_at(self, rec: PeerRecord) -> int:
        if self._swept is not None and rec.peer_id not in self._silent:
            return max(rec.last_refresh, self._swept)
        return rec.last_refresh

    def expire(self, now: int) -> list[int]:
        """Drop every row not refreshed within ``refresh_ttl``."""
        stale = [pid for pid, r in self.records.items() if now - self.refreshed_at(r) > self.refresh_ttl]
        for pid in stale:
            self.unpublish(pid)
        return stale

    def silence(self, peer_id: int) -> None:
        """Stop counting bulk refreshes for ``peer_id`` (it has gone quiet)."""
        rec = self.records.get(peer_id)
        if rec is not None:
            rec.last_refresh = self.refreshed_at(rec)
            self._silent.add(peer_id)

    def refresh_all(self, now: int) -> list[int]:
        """Refresh every row except silenced ones, then expire stale silenced rows.

        Equivalent to each live peer sending its periodic refresh at ``now``,
        but costs O(silenced rows) rather than O(rows).
        """
        self._swept = now
        stale = sorted(p for p in self._silent if now - self.records[p].last_refresh > self.refresh_ttl)
        for pid in stale:
            self.unpublish(pid)
        return stale

    def set_source_out(self, feed: FeedId, out_degree: int) -> None:
        self.source_out[feed] = max(0, out_degree)

    # -- queries ------------------------------------------------------------

    def is_eligible(self, rec: PeerRecord, feed: FeedId, now: int) -> bool:
        return (
            rec.willing_feed is feed
            and rec.out_degree < self.max_out_degree
            and (rec.ineligible_until is None or rec.ineligible_until <= now)
            and now - self.refreshed_at(rec) <= self.refresh_ttl
        )

    def source_eligible(self, feed: FeedId) -> bool:
        return self.source_out[feed] < self.source_capacity

    def query_best_source(self, feed: FeedId, requester: int, now: int, exclude=()) -> PeerRecord:
        """Return the best eligible forwarder for ``feed``.

        The source is returned as a synthetic row (``registered_at=-1``) so it
        wins ties against any peer with the same load.
        """
        if requester == self.source_id:
            raise ValueError("the source does not query for feeds")
        if self.hop_policy:
            return self._query_by_hops(feed, requester, now, exclude)

        best = self._heap_best(feed, requester, now, exclude)
        if self.source_eligible(feed) and self.source_id not in exclude:
            src_out = self.source_out[feed]
            if best is None or (src_out, -1) <= (best.out_degree, best.registered_at):
                return self._source_row(feed)
        if best is None:
            raise NoSourceAvailable(f"no eligible forwarder for {feed}")
        return best

    def ranked_sources(self, feed: FeedId, requester: int, now: int, exclude=()):
        """Yield eligible forwarders best first, as repeated queries would.

        Equivalent to calling :meth:`query_best_source` and adding each
        answer to ``exclude``, but a walk of k refusals costs O(k log n)
        instead of O(k^2). The index must not change while the generator
        is open; close it before acting on the answer.
        """
        if requester == self.source_id:
            raise ValueError("the source does not query for feeds")
        if self.hop_policy:
            exclude = set(exclude)
            while True:
                try:
                    rec = self._query_by_hops(feed, requester, now, exclude)
                except NoSourceAvailable:
                    return
                yield rec
                exclude.add(rec.peer_id)
        heap = self._heaps[feed]
        skipped = []
        src_pending = self.source_eligible(feed) and self.source_id not in exclude
        try:
            while True:
                found = None
                while heap:
                    out, reg, pid = heap[0]
                    rec = self.records.get(pid)
                    if rec is None or rec.willing_feed is not feed or rec.out_degree != out:
                        heapq.heappop(heap)
                        continue
                    if now - self.refreshed_at(rec) > self.refresh_ttl:
                        heapq.heappop(heap)
                        self.unpublish(pid)
                        continue
                    if out >= self.max_out_degree:
                        heapq.heappop(heap)
                        continue
                    skipped.append(heapq.heappop(heap))
                    if pid == requester or pid in exclude or (
                        rec.ineligible_until is not None and rec.ineligible_until > now
                    ):
                        continue
                    found = rec
                    break
                if src_pending and (found is None or (self.source_out[feed], -1) <= (found.out_degree, found.registered_at)):
                    src_pending = False
                    yield self._source_row(feed)
                if found is None:
                    return
                yield found
        finally:
            for entry in skipped:
                heapq.heappush(heap, entry)

    def _source_row(self, feed: FeedId) -> PeerRecord:
        return PeerRecord(self.source_id, feed, self.source_out[feed], registered_at=-1)

    def _heap_best(self, feed, requester, now, exclude) -> PeerRecord | None:
        heap = self._heaps[feed]
        skipped = []
        found = None
        while heap:
            out, reg, pid = heap[0]
            rec = self.records.get(pid)
            if rec is None or rec.willing_feed is not feed or rec.out_degree != out:
                heapq.heappop(heap)  # superseded entry
                continue
            if now - self.refreshed_at(rec) > self.refresh_ttl:
                heapq.heappop(heap)
                self.unpublish(pid)
                continue
            if out >= self.max_out_degree:
                heapq.heappop(heap)
                continue
            if pid == requester or pid in exclude or (
                rec.ineligible_until is not None and rec.ineligible_until > now
            ):
                skipped.append(heapq.heappop(heap))
                continue
            found = rec
            break
        for entry in skipped:
            heapq.heappush(heap, entry)
        return found

    def _query_by_hops(self, feed, requester, now, exclude) -> PeerRecord:
        candidates = [
            r for r in self.records.values()
            if r.peer_id != requester and r.peer_id not in exclude and self.is_eligible(r, feed, now)
        ]
        keyed = [((self.hops(r.peer_id, feed), r.out_degree, r.registered_at, r.peer_id), r) for r in candidates]
        if self.source_eligible(feed) and self.source_id not in exclude:
            keyed.append(((0, self.source_out[feed], -1, self.source_id), self._source_row(feed)))
        if not keyed:
            raise NoSourceAvailable(f"no eligible forwarder for {feed}")
        return min(keyed, key=lambda kr: kr[0])[1]

    def hops(self, peer_id: int, feed: FeedId) -> float:
        """Advertised distance from the source along ``feed`` parent columns."""
        n = 0
        cur = peer_id
        seen = set()
        while cur != self.source_id:
            rec = self.records.get(cur)
            if rec is None or cur in seen:
                return float("inf")
            seen.add(cur)
            cur = rec.parent(feed)
            if cur is None:
                return float("inf")
            n += 1
        return n

    def assign_forward_feed(self, now: int | None = None) -> FeedId:
        """Feed with fewer forwarders (all rows plus the source); ties go to F1."""
        counts = self.forwarder_counts()
        return FeedId.F2 if counts[FeedId.F2] < counts[FeedId.F1] else FeedId.F1

    def forwarder_counts(self) -> dict[FeedId, int]:
        """Forwarders per feed, the source counted once for each."""
        return {f: 1 + self._willing[f] for f in FEEDS}

    def eligible(self, feed: FeedId, now: int) -> list[PeerRecord]:
        """Linear scan of eligible rows; the source is not included."""
        return sorted(
            (r for r in self.records.values() if self.is_eligible(r, feed, now)),
            key=lambda r: (r.out_degree, r.registered_at, r.peer_id),
        )

    def idle_forwarders(self, feed: FeedId, now: int) -> list[int]:
        """Fresh, untagged ``feed`` forwarders with no children, oldest first."""
        rows = (self.records[p] for p in self._idle[feed])
        live = [
            r for r in rows
            if now - self.refreshed_at(r) <= self.refresh_ttl
            and (r.ineligible_until is None or r.ineligible_until <= now)
        ]
        return [r.peer_id for r in sorted(live, key=lambda r: (r.registered_at, r.peer_id))]

    def subtree(self, root: int, feed: FeedId) -> set[int]:
        """Rows below ``root`` in ``feed``, following the parent columns."""
        kids = self._kids[feed]
        out: set[int] = set()
        stack = [root]
        while stack:
            for c in kids.get(stack.pop(), ()):
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def snapshot(self) -> list[PeerRecord]:
        return [dataclasses.replace(self.records[pid]) for pid in sorted(self.records)]

    # -- internals ----------------------------------------------------------

    def _push(self, rec: PeerRecord) -> None:
        if rec.willing_feed is not None and rec.out_degree < self.max_out_degree:
            heapq.heappush(self._heaps[rec.willing_feed], (rec.out_degree, rec.registered_at, rec.peer_id))

    def _link(self, rec: PeerRecord) -> None:
        if rec.willing_feed is not None:
            self._willing[rec.willing_feed] += 1
            if rec.out_degree == 0:
                self._idle[rec.willing_feed].add(rec.peer_id)
        for feed in FEEDS:
            p = rec.parent(feed)
            if p is not None:
                self._kids[feed].setdefault(p, set()).add(rec.peer_id)

    def _unlink(self, rec: PeerRecord) -> None:
        if rec.willing_feed is not None:
            self._willing[rec.willing_feed] -= 1
            self._idle[rec.willing_feed].discard(rec.peer_id)
        for feed in FEEDS:
            p = rec.parent(feed)
            if p is not None:
                kids = self._kids[feed].get(p)
                if kids is not None:
                    kids.discard(rec.peer_id)
                    if not kids:
                        del self._kids[feed][p]
