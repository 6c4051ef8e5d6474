"""How the three repair strategies behave under heavy churn.

About a thousand membership changes hit one overlay. When a relay dies, its
orphaned subtree must not adopt new children while it is cut off, or a peer
could end up below its own descendant. Under HOLD the subtree refuses
requests itself. UNPUBLISH withdraws its adverts from the index until it is
fed again, while INE has the index tag it ineligible for a fixed window.
The table compares repair speed with the refusals each strategy causes.

    python3 demos/churn_strategies.py [seeds]
"""

import dataclasses
import statistics
import sys
import time
from pathlib import Path

from dualfeed import Simulation, Strategy, load_scenario
from dualfeed.checks import all_violations

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def main(seeds=5):
    base = load_scenario(SCENARIOS / "churn1000.scenario")
    print(" strategy   recovery med/max  refusals  violations  wall s")
    for strategy in Strategy:
        times, refused, bad, start = [], 0, 0, time.perf_counter()
        for seed in range(seeds):
            sim = Simulation(dataclasses.replace(base, seed=seed, strategy=strategy))
            sim.run()
            res = sim.result()
            times += [r["recovery_time"] for r in res.metrics.failures if r["recovery_time"] is not None]
            refused += sum(1 for e in sim.trace if e["kind"] == "refused")
            bad += len(all_violations(res.topology))
        wall = time.perf_counter() - start
        print(f" {strategy.value:<9}  {statistics.median(times):>6g} / {max(times):<6}"
              f"  {refused:>8}  {bad:>10}  {wall:>6.1f}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:2]))
