"""Two copies of the stream feeding a single player.

The fast feed runs four packets ahead of the slow one. Both copies land in
the same deduplicated buffer and the player trails the slower feed's head
by one packet. Losing the fast feed costs nothing: every packet it carried
still arrives on the slow feed before the player needs it.

    python3 demos/playout_buffer.py
"""

from dualfeed import FeedId, PlayoutBuffer

LEAD, LAG = 4, 1


def main():
    buf = PlayoutBuffer(playout_lag=LAG)
    print(" tick  fast head  slow head  playing  buffered")
    for k in range(14):
        fast_alive = k < 8
        if fast_alive:
            for s in range(0 if k == 0 else k + LEAD, k + LEAD + 1):
                buf.receive(s, FeedId.F1)
        buf.receive(k, FeedId.F2)
        played = buf.tick()
        note = "" if fast_alive else "  (fast feed gone)"
        print(f" {k:>4}  {str(buf.head[FeedId.F1]):>9}  {buf.head[FeedId.F2]:>9}"
              f"  {str(played):>7}  {sorted(buf.stored)}{note}")
    print(f"\nunderruns: {buf.underruns}, peak occupancy: {buf.max_occupancy}")


if __name__ == "__main__":
    main()
