"""Scenario files: a strict INI dialect describing topology, agents, timing,
and traffic shaping for one simulated engagement.

The loader validates the whole file and reports every problem it finds with
section and key context (plus a line number where one can be located),
instead of stopping at the first error. Unknown sections and keys are errors:
a typo must never silently fall back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .engine import Dist, ParameterError
from .hub import HeartbeatPolicy, make_content_key
from .traffic import BeaconConfig, ChannelProfile, WorkdayModel

MODES = ("autonomous_swarm", "manual_baseline")

DEFAULT_HORIZON_MS = 7 * 86_400_000


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class IntelSpec:
    kind: str
    name: str
    subnet: str
    host: str

    @property
    def content_key(self) -> str:
        return make_content_key(self.kind, {"name": self.name})


@dataclass(frozen=True)
class PivotEdge:
    credential_key: str
    from_subnet: str
    to_subnet: str


@dataclass(frozen=True)
class Topology:
    subnets: tuple[str, ...]
    hosts_per_subnet: int
    intel: tuple[IntelSpec, ...]
    pivot_edges: tuple[PivotEdge, ...]
    required_keys: tuple[str, ...]

    def hosts(self, subnet: str) -> list[str]:
        return [f"{subnet}/host-{i}" for i in range(self.hosts_per_subnet)]

    def host_key(self, host: str) -> str:
        return make_content_key("host", {"name": host})

    def recon_yield(self, subnet: str) -> list[tuple[str, str]]:
        """(kind, name) pairs a full sweep of the subnet discovers."""
        found = [("host", h) for h in self.hosts(subnet)]
        found += [(i.kind, i.name) for i in self.intel if i.subnet == subnet]
        return found

    def placement_subnet(self, key: str) -> str | None:
        for spec in self.intel:
            if spec.content_key == key:
                return spec.subnet
        m = re.fullmatch(r"host:name=([^/]+)/.*", key)
        return m.group(1) if m else None


@dataclass(frozen=True)
class AgentSpec:
    entity: str
    capabilities: frozenset[str]


@dataclass(frozen=True)
class Timing:
    task_duration: Dist
    planner_turns: Dist
    planner_turn_latency: Dist
    event_dispatch_latency: Dist
    manual_think_time: Dist
    heartbeat: HeartbeatPolicy


@dataclass(frozen=True)
class BeaconParams:
    interval_ms: int = 60_000
    jitter_fraction: float = 0.1
    request_size: Dist = Dist("uniform", (580.0, 620.0))
    response_size: Dist = Dist("uniform", (280.0, 320.0))
    duration: Dist = Dist("uniform", (40.0, 120.0))

    def config(self, src: str, dst: str, horizon_ms: int) -> BeaconConfig:
        return BeaconConfig(interval_ms=self.interval_ms,
                            jitter_fraction=self.jitter_fraction,
                            horizon_ms=horizon_ms, src=src, dst=dst,
                            request_size=self.request_size,
                            response_size=self.response_size,
                            duration=self.duration)


@dataclass(frozen=True)
class ChannelParams:
    profile: ChannelProfile = ChannelProfile()
    streaming: bool = False
    chaff_per_hour: float = 0.0


@dataclass(frozen=True)
class BackgroundParams:
    n_users: int = 0
    sessions_per_day: Dist = Dist("uniform", (3.0, 7.0))
    flows_per_session: Dist = Dist("uniform", (3.0, 12.0))
    flow_gap: Dist = Dist("exponential", (20000.0,))
    request_size: Dist = Dist("lognormal", (7.5, 0.9))
    response_size: Dist = Dist("lognormal", (9.0, 1.1))
    duration: Dist = Dist("lognormal", (7.0, 0.8))
    workday_start_hour: int = 9
    workday_end_hour: int = 17
    off_hours_fraction: float = 0.1

    def model(self, horizon_ms: int) -> WorkdayModel:
        return WorkdayModel(horizon_ms=horizon_ms,
                            sessions_per_day=self.sessions_per_day,
                            flows_per_session=self.flows_per_session,
                            flow_gap=self.flow_gap,
                            request_size=self.request_size,
                            response_size=self.response_size,
                            duration=self.duration,
                            workday_start_hour=self.workday_start_hour,
                            workday_end_hour=self.workday_end_hour,
                            off_hours_fraction=self.off_hours_fraction)


@dataclass(frozen=True)
class Scenario:
    seed: int
    mode: str
    horizon_ms: int
    topology: Topology
    agents: tuple[AgentSpec, ...]
    timing: Timing
    beacon: BeaconParams
    channels: ChannelParams
    background: BackgroundParams

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed)

    def with_mode(self, mode: str) -> "Scenario":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        return dataclasses.replace(self, mode=mode)

    def with_beacon_interval(self, interval_ms: int) -> "Scenario":
        beacon = dataclasses.replace(self.beacon, interval_ms=interval_ms)
        return dataclasses.replace(self, beacon=beacon)


_SECTIONS = {
    "scenario": {"seed", "mode", "horizon_ms"},
    "topology": {"subnets", "hosts_per_subnet", "intel", "pivot_edges",
                 "required_intel"},
    "agents": {"count", "capabilities"},
    "timing": {"task_duration", "planner_turns", "planner_turn_latency",
               "event_dispatch_latency", "manual_think_time",
               "heartbeat_min_window_ms", "heartbeat_max_window_ms"},
    "beacon": {"interval_ms", "jitter_fraction", "request_size",
               "response_size", "duration"},
    "channels": {"request_size", "response_size", "duration", "context_growth",
                 "turn_gap", "summary_response", "burst_count",
                 "burst_interval", "burst_size", "streaming", "chaff_per_hour",
                 "tls_profile"},
    "background": {"n_users", "sessions_per_day", "flows_per_session",
                   "flow_gap", "request_size", "response_size", "duration",
                   "workday_start_hour", "workday_end_hour",
                   "off_hours_fraction"},
}
_REQUIRED_SECTIONS = ("scenario", "topology", "agents")

_TIMING_DEFAULTS = {
    "task_duration": "lognormal(10.9, 0.35)",
    "planner_turns": "uniform(2, 6)",
    "planner_turn_latency": "lognormal(9.0, 0.4)",
    "event_dispatch_latency": "uniform(200, 1500)",
    "manual_think_time": "lognormal(10.3, 0.4)",
}


class _Reader:
    """Accumulates diagnostics while pulling typed values out of the parser."""

    def __init__(self, cp: configparser.ConfigParser, text: str):
        self.cp = cp
        self.text = text
        self.diagnostics: list[str] = []

    def fail(self, section: str, key: str | None, message: str) -> None:
        where = f"[{section}]" + (f" {key}" if key else "")
        line = self._line_of(section, key)
        suffix = f" (line {line})" if line else ""
        self.diagnostics.append(f"{where}: {message}{suffix}")

    def _line_of(self, section: str, key: str | None) -> int | None:
        lines = self.text.splitlines()
        in_section = False
        for i, raw in enumerate(lines, start=1):
            stripped = raw.strip()
            if stripped.startswith("["):
                if in_section and key is not None:
                    return None
                in_section = stripped == f"[{section}]"
                if in_section and key is None:
                    return i
                continue
            if in_section and key is not None and re.match(
                    rf"^\s*{re.escape(key)}\s*=", raw):
                return i
        return None

    def get(self, section: str, key: str, default=None) -> str | None:
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            return default
        return self.cp.get(section, key)

    def get_int(self, section: str, key: str, default: int,
                minimum: int | None = None, maximum: int | None = None) -> int:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {raw!r}")
            return default
        if minimum is not None and value < minimum:
            self.fail(section, key, f"must be >= {minimum}, got {value}")
            return default
        if maximum is not None and value > maximum:
            self.fail(section, key, f"must be <= {maximum}, got {value}")
            return default
        return value

    def get_float(self, section: str, key: str, default: float,
                  lo: float | None = None, hi: float | None = None,
                  hi_open: bool = False) -> float:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            value = float(raw)
        except ValueError:
            self.fail(section, key, f"expected a number, got {raw!r}")
            return default
        if lo is not None and value < lo:
            self.fail(section, key, f"must be >= {lo}, got {value}")
            return default
        if hi is not None and (value > hi or (hi_open and value == hi)):
            op = "<" if hi_open else "<="
            self.fail(section, key, f"must be {op} {hi}, got {value}")
            return default
        return value

    def get_bool(self, section: str, key: str, default: bool) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        self.fail(section, key, f"expected true or false, got {raw!r}")
        return default

    def get_dist(self, section: str, key: str, default: str) -> Dist:
        raw = self.get(section, key, default)
        try:
            return Dist.parse(raw)
        except ParameterError as exc:
            self.fail(section, key, str(exc))
            return Dist.parse(default)

    def multiline(self, section: str, key: str) -> list[str]:
        raw = self.get(section, key)
        if raw is None:
            return []
        return [line.strip() for line in raw.splitlines() if line.strip()]


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   strict=True)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError([f"unparseable scenario file: {exc}"]) from exc

    r = _Reader(cp, text)

    for section in cp.sections():
        if section not in _SECTIONS:
            r.fail(section, None, "unknown section")
        else:
            for key in cp.options(section):
                if key not in _SECTIONS[section]:
                    r.fail(section, key, "unknown key")
    for section in _REQUIRED_SECTIONS:
        if not cp.has_section(section):
            r.diagnostics.append(f"[{section}]: required section is missing")

    if r.diagnostics:
        raise ScenarioError(r.diagnostics)

    # [scenario]
    seed = r.get_int("scenario", "seed", 0)
    if r.get("scenario", "seed") is None:
        r.fail("scenario", None, "seed is required")
    mode = r.get("scenario", "mode") or ""
    if mode not in MODES:
        r.fail("scenario", "mode",
               f"must be one of {', '.join(MODES)}, got {mode!r}")
        mode = MODES[0]
    horizon = r.get_int("scenario", "horizon_ms", DEFAULT_HORIZON_MS, minimum=1)

    # [topology]
    subnets_raw = r.get("topology", "subnets") or ""
    subnets = tuple(s.strip() for s in subnets_raw.split(",") if s.strip())
    if not subnets:
        r.fail("topology", "subnets", "at least one subnet is required")
    elif len(set(subnets)) != len(subnets):
        r.fail("topology", "subnets", "subnet names must be unique")
    hosts_per = r.get_int("topology", "hosts_per_subnet", 4, minimum=1)

    intel: list[IntelSpec] = []
    intel_names: dict[str, IntelSpec] = {}
    for line in r.multiline("topology", "intel"):
        m = re.fullmatch(r"(\w+)\s+([\w./-]+)\s*@\s*([\w-]+)/([\w-]+)", line)
        if not m:
            r.fail("topology", "intel",
                   f"expected '<kind> <name> @ <subnet>/<host>', got {line!r}")
            continue
        kind, name, subnet, host = m.groups()
        if kind == "host" or kind not in {"port", "service", "credential",
                                          "share", "misc"}:
            r.fail("topology", "intel",
                   f"kind must be port/service/credential/share/misc, got {kind!r}")
            continue
        if subnet not in subnets:
            r.fail("topology", "intel", f"unknown subnet {subnet!r} in {line!r}")
            continue
        if host not in {f"host-{i}" for i in range(hosts_per)}:
            r.fail("topology", "intel", f"unknown host {host!r} in {line!r}")
            continue
        spec = IntelSpec(kind=kind, name=name, subnet=subnet,
                         host=f"{subnet}/{host}")
        if f"{kind}:{name}" in intel_names:
            r.fail("topology", "intel", f"duplicate item {kind} {name}")
            continue
        intel_names[f"{kind}:{name}"] = spec
        intel.append(spec)

    edges: list[PivotEdge] = []
    for line in r.multiline("topology", "pivot_edges"):
        m = re.fullmatch(r"([\w./-]+)\s*:\s*([\w-]+)\s*->\s*([\w-]+)", line)
        if not m:
            r.fail("topology", "pivot_edges",
                   f"expected '<credential>: <from> -> <to>', got {line!r}")
            continue
        cred, from_s, to_s = m.groups()
        spec = intel_names.get(f"credential:{cred}")
        if spec is None:
            r.fail("topology", "pivot_edges",
                   f"{cred!r} is not a declared credential")
            continue
        if from_s not in subnets or to_s not in subnets:
            r.fail("topology", "pivot_edges", f"unknown subnet in {line!r}")
            continue
        edges.append(PivotEdge(credential_key=spec.content_key,
                               from_subnet=from_s, to_subnet=to_s))

    required: list[str] = []
    required_raw = r.get("topology", "required_intel") or ""
    if not required_raw.strip():
        r.fail("topology", "required_intel", "at least one item is required")
    for ref in (x.strip() for x in required_raw.split(",") if x.strip()):
        if ":" not in ref:
            r.fail("topology", "required_intel",
                   f"expected '<kind>:<name>', got {ref!r}")
            continue
        kind, name = ref.split(":", 1)
        if kind == "host":
            host_names = {f"{s}/host-{i}" for s in subnets
                          for i in range(hosts_per)}
            if name not in host_names:
                r.fail("topology", "required_intel", f"unknown host {name!r}")
                continue
            required.append(make_content_key("host", {"name": name}))
        else:
            spec = intel_names.get(ref)
            if spec is None:
                r.fail("topology", "required_intel",
                       f"{ref!r} is not a declared item")
                continue
            required.append(spec.content_key)

    # [agents]
    count = r.get_int("agents", "count", 0, minimum=1)
    if r.get("agents", "count") is None:
        r.fail("agents", None, "count is required")
    entities = [f"implant-{i}" for i in range(1, count + 1)]
    caps: dict[str, set[str]] = {}
    for line in r.multiline("agents", "capabilities"):
        m = re.fullmatch(r"([\w-]+)\s*:\s*(.+)", line)
        if not m:
            r.fail("agents", "capabilities",
                   f"expected '<implant>: <subnet, ...>', got {line!r}")
            continue
        entity, rest = m.groups()
        if entity not in entities:
            r.fail("agents", "capabilities",
                   f"{entity!r} is not implant-1..implant-{count}")
            continue
        tags = {t.strip() for t in rest.split(",") if t.strip()}
        bad = tags - set(subnets)
        if bad:
            r.fail("agents", "capabilities",
                   f"unknown subnet(s) {sorted(bad)} for {entity}")
            continue
        caps[entity] = tags
    default_caps = {subnets[0]} if subnets else set()
    agents = tuple(AgentSpec(entity=e,
                             capabilities=frozenset(caps.get(e, default_caps)))
                   for e in entities)

    # [timing]
    timing_dists = {key: r.get_dist("timing", key, default)
                    for key, default in _TIMING_DEFAULTS.items()}
    hb_min = r.get_int("timing", "heartbeat_min_window_ms", 3_600_000, minimum=1)
    hb_max = r.get_int("timing", "heartbeat_max_window_ms", 172_800_000, minimum=1)
    if hb_min > hb_max:
        r.fail("timing", "heartbeat_min_window_ms",
               f"min window {hb_min} exceeds max window {hb_max}")
        hb_min = hb_max

    # [beacon]
    beacon = BeaconParams(
        interval_ms=r.get_int("beacon", "interval_ms", 60_000, minimum=1),
        jitter_fraction=r.get_float("beacon", "jitter_fraction", 0.1,
                                    lo=0.0, hi=1.0, hi_open=True),
        request_size=r.get_dist("beacon", "request_size", "uniform(580, 620)"),
        response_size=r.get_dist("beacon", "response_size", "uniform(280, 320)"),
        duration=r.get_dist("beacon", "duration", "uniform(40, 120)"))

    # [channels]
    profile = ChannelProfile(
        request_size=r.get_dist("channels", "request_size", "lognormal(7.2, 0.4)"),
        response_size=r.get_dist("channels", "response_size", "lognormal(8.5, 0.6)"),
        duration=r.get_dist("channels", "duration", "lognormal(6.9, 0.5)"),
        context_growth=r.get_dist("channels", "context_growth", "lognormal(7.8, 0.7)"),
        turn_gap=r.get_dist("channels", "turn_gap", "exponential(9000)"),
        summary_response=r.get_dist("channels", "summary_response", "lognormal(10.4, 0.4)"),
        burst_count=r.get_dist("channels", "burst_count", "uniform(8, 40)"),
        burst_interval=r.get_dist("channels", "burst_interval", "lognormal(8.0, 1.2)"),
        burst_size=r.get_dist("channels", "burst_size", "lognormal(6.5, 1.0)"),
        tls_profile=r.get("channels", "tls_profile", "generic-tls-client"))
    channels = ChannelParams(
        profile=profile,
        streaming=r.get_bool("channels", "streaming", False),
        chaff_per_hour=r.get_float("channels", "chaff_per_hour", 0.0, lo=0.0))

    # [background]
    start_h = r.get_int("background", "workday_start_hour", 9, minimum=0, maximum=23)
    end_h = r.get_int("background", "workday_end_hour", 17, minimum=1, maximum=24)
    if start_h >= end_h:
        r.fail("background", "workday_start_hour",
               f"start hour {start_h} must precede end hour {end_h}")
        start_h, end_h = 9, 17
    background = BackgroundParams(
        n_users=r.get_int("background", "n_users", 0, minimum=0),
        sessions_per_day=r.get_dist("background", "sessions_per_day", "uniform(3, 7)"),
        flows_per_session=r.get_dist("background", "flows_per_session", "uniform(3, 12)"),
        flow_gap=r.get_dist("background", "flow_gap", "exponential(20000)"),
        request_size=r.get_dist("background", "request_size", "lognormal(7.5, 0.9)"),
        response_size=r.get_dist("background", "response_size", "lognormal(9.0, 1.1)"),
        duration=r.get_dist("background", "duration", "lognormal(7.0, 0.8)"),
        workday_start_hour=start_h, workday_end_hour=end_h,
        off_hours_fraction=r.get_float("background", "off_hours_fraction", 0.1,
                                       lo=0.0, hi=1.0))

    # reachability: every required item must be collectable by some agent
    # through the declared pivot chain
    if subnets and agents and required:
        reachable = set()
        for spec in agents:
            reachable |= spec.capabilities
        changed = True
        while changed:
            changed = False
            for edge in edges:
                placement = next((i.subnet for i in intel
                                  if i.content_key == edge.credential_key), None)
                if (edge.to_subnet not in reachable
                        and edge.from_subnet in reachable
                        and placement in reachable):
                    reachable.add(edge.to_subnet)
                    changed = True
        for key in required:
            spec = next((i for i in intel if i.content_key == key), None)
            subnet = spec.subnet if spec else key.split("name=", 1)[1].split("/")[0]
            if subnet not in reachable:
                r.fail("topology", "required_intel",
                       f"{key!r} sits in {subnet!r}, which no agent can reach")

    if r.diagnostics:
        raise ScenarioError(r.diagnostics)

    topology = Topology(subnets=subnets, hosts_per_subnet=hosts_per,
                        intel=tuple(intel), pivot_edges=tuple(edges),
                        required_keys=tuple(required))
    timing = Timing(heartbeat=HeartbeatPolicy(hb_min, hb_max), **timing_dists)
    return Scenario(seed=seed, mode=mode, horizon_ms=horizon,
                    topology=topology, agents=agents, timing=timing,
                    beacon=beacon, channels=channels, background=background)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), source=str(path))


def validate_text(text: str) -> list[str]:
    """All diagnostics for a scenario file; empty means valid."""
    try:
        parse_scenario(text)
    except ScenarioError as exc:
        return exc.diagnostics
    return []


def default_scenario_text() -> str:
    """A ready-to-run engagement: three zones, one credential-locked pivot.

    implant-1 and implant-2 sit in the user zone, implant-3 in the DMZ. The
    credential found on a DMZ host unlocks the server zone from the user
    zone, and the objective is the share on a server-zone host.
    """
    return """\
# Three-zone exercise with one credential-locked pivot.
[scenario]
seed = 42
mode = autonomous_swarm
horizon_ms = 604800000

[topology]
subnets = user_zone, dmz, server_zone
hosts_per_subnet = 4
intel =
    credential cred-server @ dmz/host-1
    share crown-jewels @ server_zone/host-2
pivot_edges =
    cred-server: user_zone -> server_zone
required_intel = share:crown-jewels

[agents]
count = 3
capabilities =
    implant-1: user_zone
    implant-2: user_zone
    implant-3: dmz

[timing]
task_duration = lognormal(10.9, 0.35)
planner_turns = uniform(2, 6)
planner_turn_latency = lognormal(9.0, 0.4)
event_dispatch_latency = uniform(200, 1500)
manual_think_time = lognormal(10.3, 0.4)
heartbeat_min_window_ms = 3600000
heartbeat_max_window_ms = 172800000

[beacon]
interval_ms = 60000
jitter_fraction = 0.1

[channels]
streaming = false
chaff_per_hour = 0

[background]
n_users = 0
"""


def default_scenario() -> Scenario:
    return parse_scenario(default_scenario_text(), source="<default>")
