"""Walk through the ten-node example overlay, then break it.

Ten peers join one at a time, ten ticks apart. Each gets a parent on both
feeds and is assigned one feed to relay, alternating so neither tree runs
short of forwarders. The printout shows where each peer sits in both trees
along with the hop difference between its two copies of the stream.

Then peer 3 fails at t=100. Its children notice after the heartbeat
timeout, climb to their grandparent and pull the subtree back in.

    python3 demos/ten_node_overlay.py
"""

from pathlib import Path

from dualfeed import FeedId, Simulation, hop_metrics, load_scenario, recovery_metrics

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
F1, F2 = FeedId.F1, FeedId.F2


def show(sim, title):
    print(f"\n{title} (t={sim.now})")
    print(" node  relays  parent f1  parent f2  hop diff  children")
    topo = sim.topology()
    per_node, _ = hop_metrics(topo)
    for nid in topo.nodes():
        n = sim.nodes[nid]
        fwd = n.forwarded_feed
        kids = topo.children[fwd][nid] if fwd is not None else []
        print(f" {nid:>4}  {str(fwd):>6}  {str(n.parent[F1]):>9}  {str(n.parent[F2]):>9}"
              f"  {str(per_node[nid].hop_diff):>8}  {kids}")
    src = sim.nodes[0]
    print(f" source feeds f1 to {src.children[F1]} and f2 to {src.children[F2]}")


def main():
    cfg = load_scenario(SCENARIOS / "table3.scenario")
    sim = Simulation(cfg)
    sim.run()
    show(sim, "Settled overlay")

    cfg = load_scenario(SCENARIOS / "table3_fail3.scenario")
    sim = Simulation(cfg)
    sim.run(until=99)
    victims = sorted(sim.nodes[3].children[sim.nodes[3].forwarded_feed])
    print(f"\nPeer 3 relays {sim.nodes[3].forwarded_feed} to {victims}; it fails at t=100.")
    sim.run()
    row = recovery_metrics(sim, 3)
    print(f"detected at t={row['detect_time']}, service resumed at t={row['resume_time']}, "
          f"{row['affected_count']} peers affected")
    show(sim, "After repair")
    underruns = sum(n.buffer.underruns for n in sim.live_nodes() if n.buffer is not None)
    print(f"\nplayout underruns across all survivors: {underruns}")


if __name__ == "__main__":
    main()
