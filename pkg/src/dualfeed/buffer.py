"""Single playout buffer fed by both copies of the stream."""

from __future__ import annotations

from .index import FEEDS, FeedId


class PlayoutBuffer:
    """Merge two identical packet streams into one deduplicated playout.

    Packets from either feed land in one set keyed by sequence number. The
    player starts once both feeds have delivered and the slower one has
    ``playout_lag`` packets past its first contiguous; from then on it plays
    one sequence number per tick, trailing the slower feed's head by
    ``playout_lag``. A missing sequence number is an underrun: the pointer
    holds and the tick is counted. Occupancy is tracked from playout start;
    packets prefetched before then are trimmed when the player starts.
    """

    def __init__(self, playout_lag: int = 1):
        if playout_lag < 1:
            raise ValueError("playout_lag must be >= 1")
        self.playout_lag = playout_lag
        self.play_next: int | None = None
        self.stored: set[int] = set()
        self.underruns = 0
        self.max_occupancy = 0
        self.played: list[int] = []
        self.head: dict[FeedId, int | None] = {f: None for f in FEEDS}
        self.first: dict[FeedId, int | None] = {f: None for f in FEEDS}

    @property
    def started(self) -> bool:
        return self.play_next is not None

    def receive(self, seq: int, via: FeedId) -> bool:
        """Record an arrival; returns True if it was new and not late."""
        if self.first[via] is None:
            self.first[via] = seq
        if self.head[via] is None or seq > self.head[via]:
            self.head[via] = seq
        if (self.play_next is not None and seq < self.play_next) or seq in self.stored:
            return False
        self.stored.add(seq)
        if self.play_next is not None and len(self.stored) > self.max_occupancy:
            self.max_occupancy = len(self.stored)
        return True

    def slower_feed(self) -> FeedId | None:
        h1, h2 = self.head[FeedId.F1], self.head[FeedId.F2]
        if h1 is None or h2 is None:
            return None
        return FeedId.F2 if h2 < h1 else FeedId.F1

    def _try_start(self) -> bool:
        slow = self.slower_feed()
        if slow is None:
            return False
        head, first = self.head[slow], self.first[slow]
        if head - first < self.playout_lag:
            return False
        start = head - self.playout_lag
        if any(s not in self.stored for s in range(start, head + 1)):
            return False
        self.play_next = start
        self.stored = {s for s in self.stored if s >= start}
        self.max_occupancy = max(self.max_occupancy, len(self.stored))
        return True

    def tick(self) -> int | None:
        """Advance the player by one slot; returns the packet played, if any."""
        if self.play_next is None and not self._try_start():
            return None
        seq = self.play_next
        if seq in self.stored:
            self.stored.discard(seq)
            self.play_next = seq + 1
            self.played.append(seq)
            return seq
        self.underruns += 1
        return None

    def __len__(self) -> int:
        return len(self.stored)
