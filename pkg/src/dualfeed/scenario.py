"""Scenario files: a YAML mapping describing one simulation run.

Minimal example::

    node_count: 10
    seed: 1

Every other key is optional and falls back to the defaults on
:class:`ScenarioConfig`. Unknown keys are rejected with their line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .node import Strategy

LINK_MODES = ("uniform", "per-pair", "seeded-random")


class ScenarioError(ValueError):
    """Invalid scenario; ``key`` and ``line`` locate the offending entry when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where += f"key {key!r}"
        if line is not None:
            where += f"{' ' if where else ''}(line {line})"
        super().__init__(f"{where}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass
class LinkModel:
    mode: str = "uniform"
    base_delay: int = 1
    jitter: int = 0
    pairs: dict = field(default_factory=dict)  # (a, b) with a < b -> delay

    def delay(self, a: int, b: int, rng) -> int:
        if self.mode == "uniform":
            return self.base_delay
        if self.mode == "per-pair":
            return self.pairs.get((min(a, b), max(a, b)), self.base_delay)
        return self.base_delay + (rng.randint(0, self.jitter) if self.jitter else 0)


@dataclass
class ChurnModel:
    """Poisson arrivals with exponential lifetimes.

    A lifetime ends in an abrupt failure with probability ``fail_fraction``,
    otherwise in a graceful leave. ``max_events`` caps arrivals plus
    departures, counted in time order.
    """

    arrivals: int = 0
    arrival_rate: float = 1.0
    mean_lifetime: float = 200.0
    fail_fraction: float = 0.5
    start: int = 1
    until: int | None = None
    max_events: int | None = None


@dataclass
class ScenarioConfig:
    seed: int = 0
    horizon: int = 200
    node_count: int = 1
    join_start: int = 1
    join_interval: int = 10
    arrivals: list = field(default_factory=list)    # explicit join times, ids follow
    failures: list = field(default_factory=list)    # (node, time)
    leaves: list = field(default_factory=list)      # (node, time)
    churn: ChurnModel | None = None
    strategy: Strategy = Strategy.INE
    max_out_degree: int = 3
    source_per_feed_capacity: int = 1
    soft_cap_extra: int = 3
    max_redirects: int = 2
    transition_duration: int = 30
    failure_timeout: int = 3
    child_timeout: int = 6
    playout_lag: int = 1
    poll_interval: int = 5
    refresh_ttl: int = 10
    refresh_period: int = 5
    optimizer_period: int = 50
    cc_report_period: int = 10
    index_latency: int = 0
    link: LinkModel = field(default_factory=LinkModel)
    hop_count_parent_policy: bool = False
    data_plane: bool = True
    trace_data: bool = False

    def validate(self) -> ScenarioConfig:
        positive = (
            "horizon", "max_out_degree", "source_per_feed_capacity", "transition_duration",
            "failure_timeout", "child_timeout", "playout_lag", "poll_interval",
            "refresh_ttl", "refresh_period", "cc_report_period", "join_interval",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ScenarioError("must be > 0", key=name)
        for name in ("optimizer_period", "index_latency", "soft_cap_extra", "max_redirects"):
            if getattr(self, name) < 0:
                raise ScenarioError("must be >= 0", key=name)
        if self.node_count < 1:
            raise ScenarioError("must count the source (>= 1)", key="node_count")
        if self.refresh_period > self.refresh_ttl:
            raise ScenarioError("must not exceed refresh_ttl", key="refresh_period")
        if not isinstance(self.strategy, Strategy):
            raise ScenarioError(f"must be one of {[s.value for s in Strategy]}", key="strategy")
        if self.link.mode not in LINK_MODES:
            raise ScenarioError(f"must be one of {list(LINK_MODES)}", key="link.mode")
        if self.link.base_delay < 0 or self.link.jitter < 0:
            raise ScenarioError("delays must be >= 0", key="link")
        for key, sched in (("failures", self.failures), ("leaves", self.leaves)):
            for node, at in sched:
                if node == 0:
                    raise ScenarioError("the source (node 0) cannot leave or fail", key=key)
                if not 0 <= at <= self.horizon:
                    raise ScenarioError(f"time {at} outside [0, horizon]", key=key)
        if self.churn is not None:
            c = self.churn
            if c.arrivals < 0 or c.arrival_rate <= 0 or c.mean_lifetime <= 0:
                raise ScenarioError("arrivals >= 0, rate and lifetime > 0", key="churn")
            if not 0.0 <= c.fail_fraction <= 1.0:
                raise ScenarioError("must lie in [0, 1]", key="churn.fail_fraction")
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, Strategy):
                val = val.value
            elif isinstance(val, LinkModel):
                val = {
                    "mode": val.mode, "base_delay": val.base_delay, "jitter": val.jitter,
                    "pairs": [[a, b, d] for (a, b), d in sorted(val.pairs.items())],
                }
            elif isinstance(val, ChurnModel):
                val = dataclasses.asdict(val)
            elif f.name in ("failures", "leaves"):
                val = [list(x) for x in val]
            elif f.name == "arrivals":
                val = list(val)
            out[f.name] = val
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
_LINK_KEYS = {f.name for f in dataclasses.fields(LinkModel)}
_CHURN_KEYS = {f.name for f in dataclasses.fields(ChurnModel)}


def _key_lines(text: str) -> dict:
    """Map top-level (and one-level nested) keys to 1-based line numbers."""
    lines = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for k, v in root.value:
        lines[k.value] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                lines[f"{k.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def _pairs(raw, key, line):
    out = []
    for item in raw or []:
        if isinstance(item, dict):
            item = (item.get("node"), item.get("time"))
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ScenarioError("entries must be [node, time]", key=key, line=line)
        node, at = item
        if not isinstance(node, int) or not isinstance(at, int):
            raise ScenarioError("node and time must be integers", key=key, line=line)
        out.append((node, at))
    return out


def config_from_dict(data: dict, lines: dict | None = None) -> ScenarioConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping")
    kwargs = {}
    for key, val in data.items():
        line = lines.get(key)
        if key not in _FIELDS:
            raise ScenarioError(f"unknown key; valid keys: {sorted(_FIELDS)}", key=key, line=line)
        if key == "strategy":
            try:
                val = Strategy(str(val).upper())
            except ValueError:
                raise ScenarioError(
                    f"invalid strategy {val!r}; valid: {[s.value for s in Strategy]}", key=key, line=line
                ) from None
        elif key == "link":
            val = dict(val or {})
            for k in val:
                if k not in _LINK_KEYS:
                    raise ScenarioError("unknown link key", key=f"link.{k}", line=lines.get(f"link.{k}", line))
            pairs = {}
            for entry in val.pop("pairs", None) or []:
                if not isinstance(entry, (list, tuple)) or len(entry) != 3:
                    raise ScenarioError("pairs entries must be [a, b, delay]", key="link.pairs",
                                        line=lines.get("link.pairs", line))
                a, b, d = entry
                pairs[(min(a, b), max(a, b))] = d
            val = LinkModel(pairs=pairs, **val)
        elif key == "churn":
            if val is not None:
                val = dict(val)
                for k in val:
                    if k not in _CHURN_KEYS:
                        raise ScenarioError("unknown churn key", key=f"churn.{k}", line=lines.get(f"churn.{k}", line))
                val = ChurnModel(**val)
        elif key in ("failures", "leaves"):
            val = _pairs(val, key, line)
        elif key == "arrivals":
            val = [int(t) for t in (val or [])]
        else:
            expected = _FIELDS[key].type
            if expected in ("int", int) and (not isinstance(val, int) or isinstance(val, bool)):
                raise ScenarioError(f"expected an integer, got {val!r}", key=key, line=line)
            if expected in ("bool", bool) and not isinstance(val, bool):
                raise ScenarioError(f"expected true/false, got {val!r}", key=key, line=line)
        kwargs[key] = val
    cfg = ScenarioConfig(**kwargs)
    try:
        return cfg.validate()
    except ScenarioError as err:
        if err.line is None and err.key is not None:
            raise ScenarioError(str(err).split(": ", 1)[-1], key=err.key,
                                line=lines.get(err.key, lines.get(err.key.split(".")[0]))) from None
        raise


def loads_scenario(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ScenarioError(f"parse error: {err}", line=mark.line + 1 if mark else None) from None
    return config_from_dict(data or {}, _key_lines(text))


def load_scenario(path) -> ScenarioConfig:
    return loads_scenario(Path(path).read_text())


def dumps_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def write_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps_scenario(cfg))
