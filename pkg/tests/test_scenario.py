import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualfeed.node import Strategy
from dualfeed.scenario import (
    ChurnModel, LinkModel, ScenarioConfig, ScenarioError, dumps_scenario, load_scenario,
    loads_scenario, write_scenario,
)


def test_minimal_file_uses_defaults():
    cfg = loads_scenario("node_count: 10\nseed: 1\n")
    assert (cfg.node_count, cfg.seed) == (10, 1)
    assert cfg.strategy is Strategy.INE
    assert (cfg.max_out_degree, cfg.source_per_feed_capacity, cfg.refresh_ttl) == (3, 1, 10)
    assert cfg.transition_duration == 30


def test_bundled_fixture_loads():
    cfg = load_scenario("scenarios/table3.scenario")
    assert cfg.node_count == 10 and cfg.optimizer_period == 0


def test_unknown_key_reports_its_line():
    with pytest.raises(ScenarioError) as err:
        loads_scenario("node_count: 3\n\nbogus: 1\n")
    assert err.value.key == "bogus" and err.value.line == 3


def test_invalid_strategy_lists_valid_values():
    with pytest.raises(ScenarioError, match="HOLD") as err:
        loads_scenario("strategy: PANIC\n")
    assert err.value.line == 1


@pytest.mark.parametrize("text, key", [
    ("node_count: 0\n", "node_count"),
    ("horizon: -1\n", "horizon"),
    ("max_out_degree: two\n", "max_out_degree"),
    ("refresh_period: 20\n", "refresh_period"),
    ("failures: [[0, 5]]\n", "failures"),
    ("failures: [[3, 900]]\n", "failures"),
    ("leaves: [3]\n", "leaves"),
    ("link:\n  mode: warp\n", "link.mode"),
    ("link:\n  speed: 1\n", "link.speed"),
    ("link:\n  pairs: [[1, 2]]\n", "link.pairs"),
    ("churn:\n  fail_fraction: 2.0\n", "churn.fail_fraction"),
    ("churn:\n  lifetime: 3\n", "churn.lifetime"),
    ("data_plane: 1\n", "data_plane"),
])
def test_validation_errors_name_the_key(text, key):
    with pytest.raises(ScenarioError) as err:
        loads_scenario(text)
    assert err.value.key == key
    assert err.value.line is not None


def test_parse_error_has_line():
    with pytest.raises(ScenarioError) as err:
        loads_scenario("node_count: 3\nseed: [1\n")
    assert err.value.line is not None


def test_not_a_mapping():
    with pytest.raises(ScenarioError):
        loads_scenario("- 1\n- 2\n")


def test_failures_accept_mappings():
    cfg = loads_scenario("node_count: 5\nfailures:\n  - {node: 3, time: 40}\n")
    assert cfg.failures == [(3, 40)]


def test_write_and_load(tmp_path):
    cfg = ScenarioConfig(node_count=4, failures=[(2, 50)], strategy=Strategy.HOLD)
    path = tmp_path / "s.scenario"
    write_scenario(cfg, path)
    assert load_scenario(path) == cfg


configs = st.builds(
    ScenarioConfig,
    seed=st.integers(0, 2**31),
    horizon=st.integers(100, 5000),
    node_count=st.integers(1, 50),
    join_interval=st.integers(1, 20),
    arrivals=st.lists(st.integers(0, 100), max_size=5),
    failures=st.lists(st.tuples(st.integers(1, 40), st.integers(0, 100)), max_size=4),
    leaves=st.lists(st.tuples(st.integers(1, 40), st.integers(0, 100)), max_size=4),
    churn=st.none() | st.builds(
        ChurnModel, arrivals=st.integers(0, 100), arrival_rate=st.floats(0.01, 10),
        mean_lifetime=st.floats(1, 1000), fail_fraction=st.floats(0, 1),
        max_events=st.none() | st.integers(0, 100),
    ),
    strategy=st.sampled_from(list(Strategy)),
    max_out_degree=st.integers(1, 6),
    playout_lag=st.integers(1, 10),
    optimizer_period=st.integers(0, 100),
    link=st.builds(
        LinkModel, mode=st.sampled_from(["uniform", "per-pair", "seeded-random"]),
        base_delay=st.integers(0, 5), jitter=st.integers(0, 3),
        pairs=st.dictionaries(st.tuples(st.integers(0, 9), st.integers(10, 19)), st.integers(0, 9), max_size=3),
    ),
    hop_count_parent_policy=st.booleans(),
    data_plane=st.booleans(),
)


@settings(max_examples=150, deadline=None)
@given(configs)
def test_round_trip(cfg):
    assert loads_scenario(dumps_scenario(cfg)) == cfg
