"""Shorten a badly shaped tree with local moves.

A random tree is built with fan-out at most three. Each optimizer round
lets every peer try two things: pull its heaviest grandchild up into a free
slot, or swap places with its parent when its subtree outweighs all its
siblings together. Total depth falls every round until nothing moves.

    python3 demos/tree_optimizer.py [size] [seed]
"""

import random
import sys

from dualfeed.optimizer import FeedTree, optimize_round


def random_tree(n, rng):
    parents, kids = {0: None}, {0: 0}
    for v in range(1, n):
        while True:
            p = rng.randrange(v)
            if kids[p] < (1 if p == 0 else 3):
                break
        parents[v] = p
        kids[p] += 1
        kids[v] = 0
    return parents


def main(n=120, seed=4):
    tree = FeedTree.from_parents(0, random_tree(n, random.Random(seed)), max_out_degree=3,
                                 capacities={0: 1})
    print(f"{n}-node tree, total depth {tree.total_depth()}")
    rnd = 0
    while True:
        acts = optimize_round(tree)
        rnd += 1
        if not acts:
            print(f"round {rnd}: no moves, done")
            break
        kinds = {}
        for a in acts:
            kinds[type(a).__name__] = kinds.get(type(a).__name__, 0) + 1
        gain = -sum(a.depth_delta for a in acts)
        print(f"round {rnd}: {kinds}, depth -{gain} -> {tree.total_depth()}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
