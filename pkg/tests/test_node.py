import pytest

from dualfeed import node as proto
from dualfeed.engine import Simulation
from dualfeed.index import FeedId
from dualfeed.node import Strategy, accept_request, capacity
from dualfeed.scenario import ScenarioConfig

F1, F2 = FeedId.F1, FeedId.F2


@pytest.fixture
def sim(scenario):
    s = Simulation(scenario("table3"))
    s.run()
    return s


def test_accept_reasons(sim):
    n = sim.nodes
    assert accept_request(sim, n[9], n[9], F1, False) == (False, "self")
    assert accept_request(sim, n[2], n[9], F1, False) == (False, "wrong-feed")
    assert accept_request(sim, n[8], n[9], F1, False) == (False, "same-peer")
    assert accept_request(sim, n[0], n[9], F1, False) == (False, "full")
    assert accept_request(sim, n[9], n[8], F2, False) == (False, "wrong-feed")
    assert accept_request(sim, None, n[9], F1, False) == (False, "dead")
    assert accept_request(sim, n[9], n[8], F1, False) == (True, "ok")


def test_same_peer_cannot_serve_both_feeds(sim):
    n = sim.nodes
    # node 9 takes F2 from 8; 8 forwards F2 only, but the rule fires first for F1 parents
    assert accept_request(sim, n[7], n[9], F2, False) == (False, "same-peer")


def test_soft_cap_only_in_recovery(sim):
    n = sim.nodes
    assert capacity(sim, n[1], F1) == 3
    assert capacity(sim, n[1], F1, recovery=True) == 6
    assert capacity(sim, n[1], F2) == 0
    assert capacity(sim, n[0], F1) == 1
    assert accept_request(sim, n[1], n[9], F1, True) == (True, "ok")


def test_held_node_refuses(sim):
    n = sim.nodes
    n[9].hold_until[F1] = sim.now + 5
    assert accept_request(sim, n[9], n[8], F1, False) == (False, "held")
    assert n[9].held(F1, sim.now) and not n[9].held(F1, sim.now + 5)


def test_subtree_members_follow_one_feed(sim):
    assert proto.subtree_members(sim, sim.nodes[3], F1) == [3, 4, 5, 6, 7, 8, 9]
    assert proto.subtree_members(sim, sim.nodes[4], F2) == [4, 5, 6, 7, 8, 9]


def test_single_fed_node_forwards_what_it_has():
    s = Simulation(ScenarioConfig(node_count=2, horizon=5))
    s.run()
    assert s.nodes[1].forwarded_feed is F1
    assert s.nodes[1].parent[F2] is None


def test_leave_rejected_for_source(sim):
    with pytest.raises(ValueError):
        proto.leave_gracefully(sim, sim.nodes[0])


def test_unpublish_withdraws_whole_subtree(scenario):
    s = Simulation(scenario("table3_fail3", strategy=Strategy.UNPUBLISH))
    s.run(until=103)
    protect = [e for e in s.trace if e["kind"] == "protect"]
    assert all(e["until"] is None for e in protect)
    # only members relaying the lost feed withdraw; the rest keep advertising
    withdrawn = set()
    for e in protect:
        relay = {m for m in range(4, 10) if str(s.nodes[m].forwarded_feed) == e["feed"]}
        assert set(e["members"]) <= relay
        withdrawn |= set(e["members"])
    assert withdrawn
    assert all(s.nodes[m].registered for m in set(range(4, 10)) - withdrawn)
    republished = [e for e in s.trace if e["kind"] == "republish"]
    assert set().union(*(e["members"] for e in republished)) == withdrawn
    s.run()
    assert all(s.nodes[m].registered for m in range(4, 10))


def test_ine_tags_only_forwarders_of_the_feed(scenario):
    s = Simulation(scenario("table3_fail3"))
    s.run(until=103)
    tagged = {r.peer_id for r in s.index.records.values() if r.ineligible_until}
    assert tagged == {5, 7, 9}
    assert all(s.index.records[p].ineligible_until == 133 for p in tagged)


def test_recruit_switches_an_idle_leaf(sim):
    n = sim.nodes
    # starve F2: every F2 forwarder full; node 9 relays F1 to nobody
    for nid in (2, 4, 6, 8):
        sim.index.update(nid, sim.now, out_degree=3)
    newcomer = proto.NodeState(10)
    sim.nodes[10] = newcomer
    got = proto.acquire_parent(sim, newcomer, F2)
    assert got is not None and got.id == 9
    assert n[9].forwarded_feed is F2
    assert sim.index.records[9].willing_feed is F2
    assert [e["kind"] for e in sim.trace][-1] == "recruit"


def test_recruit_refused_to_nodes_with_children(sim):
    for nid in (2, 4, 6, 8):
        sim.index.update(nid, sim.now, out_degree=3)
    assert proto.recruit_forwarder(sim, sim.nodes[6], F2) is None
    assert proto.recruit_forwarder(sim, sim.nodes[0], F2) is None


def test_cut_off_follows_the_chain_to_the_source(sim):
    n = sim.nodes
    assert not proto._cut_off(sim, n[9])
    n[5].alive = False
    assert proto._cut_off(sim, n[9])  # F1 chain 9-7-5 ends at a dead relay
    assert not proto._cut_off(sim, n[9], F2)
    assert not proto._cut_off(sim, n[0])


def test_no_republish_inside_an_orphaned_subtree(sim):
    n = sim.nodes
    proto.unregister(sim, n[7])
    n[5].alive = False
    proto._after_reattach(sim, n[7], F1)
    assert not n[7].registered and 7 not in sim.index.records
    n[5].alive = True
    proto._after_reattach(sim, n[7], F1)
    assert n[7].registered
    assert sim.trace[-1]["kind"] == "republish" and sim.trace[-1]["members"] == [7]
