"""Labeled flow-record synthesis for the communication shapes under study.

Five generators, one record type:
  * periodic beacons with bounded jitter (the classic heartbeat channel);
  * sparse event-driven hub contacts, one flow per fetch or submit;
  * non-streaming reasoning sessions whose request sizes grow turn over turn
    as accumulated context is resent, ending in an enlarged summary response;
  * streaming reasoning sessions: irregular bidirectional bursts;
  * chaff (decoy queries to the planner) and benign background traffic.

Flows are timing and byte-count records only. All sizes and gaps come from
caller-supplied named streams, so traces are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Callable, Iterable

from .engine import Dist, RngStream, draw

DST_HUB = "hub"
DST_PLANNER = "planner"
DST_BENIGN = "benign_service"
DST_CLASSES = (DST_HUB, DST_PLANNER, DST_BENIGN)

LEG_TASKING = "tasking"
LEG_REASONING = "reasoning"
LEG_BACKGROUND = "background"
LEGS = (LEG_TASKING, LEG_REASONING, LEG_BACKGROUND)

LABEL_BEACON = "beacon_c2"
LABEL_EVENT = "event_c2"
LABEL_CHAFF = "chaff"
LABEL_BENIGN = "benign"
LABELS = (LABEL_BEACON, LABEL_EVENT, LABEL_CHAFF, LABEL_BENIGN)

TRACE_COLUMNS = ("ts_start_ms", "duration_ms", "src", "dst", "dst_class",
                 "bytes_init", "bytes_resp", "leg", "label")


@dataclass(frozen=True)
class FlowRecord:
    ts_start: int
    duration: int
    src: str
    dst: str
    dst_class: str
    bytes_initiator: int
    bytes_responder: int
    leg: str
    label: str

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.bytes_initiator < 0 or self.bytes_responder < 0:
            raise ValueError("byte counts must be non-negative")
        if self.dst_class not in DST_CLASSES:
            raise ValueError(f"bad dst_class {self.dst_class!r}")
        if self.leg not in LEGS:
            raise ValueError(f"bad leg {self.leg!r}")
        if self.label not in LABELS:
            raise ValueError(f"bad label {self.label!r}")
        if self.label == LABEL_BEACON and self.leg != LEG_TASKING:
            raise ValueError("beacon flows ride the tasking leg")
        if self.label == LABEL_CHAFF and self.dst_class != DST_PLANNER:
            raise ValueError("chaff targets the planner")


@dataclass(frozen=True)
class BeaconConfig:
    interval_ms: int
    jitter_fraction: float
    horizon_ms: int
    src: str
    dst: str
    request_size: Dist = Dist("uniform", (580.0, 620.0))
    response_size: Dist = Dist("uniform", (280.0, 320.0))
    duration: Dist = Dist("uniform", (40.0, 120.0))

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        if not (0.0 <= self.jitter_fraction < 1.0):
            raise ValueError("jitter_fraction must be in [0, 1)")
        if self.horizon_ms < 0:
            raise ValueError("horizon_ms must be non-negative")


@dataclass(frozen=True)
class ChannelProfile:
    """Size and pacing model for one agent's planner and hub channels."""

    request_size: Dist = Dist("lognormal", (7.2, 0.4))
    response_size: Dist = Dist("lognormal", (8.5, 0.6))
    duration: Dist = Dist("lognormal", (6.9, 0.5))
    context_growth: Dist = Dist("lognormal", (7.8, 0.7))
    turn_gap: Dist = Dist("exponential", (9000.0,))
    summary_response: Dist = Dist("lognormal", (10.4, 0.4))
    burst_count: Dist = Dist("uniform", (8.0, 40.0))
    burst_interval: Dist = Dist("lognormal", (8.0, 1.2))
    burst_size: Dist = Dist("lognormal", (6.5, 1.0))
    tasking_request: Dist = Dist("lognormal", (6.9, 0.3))
    tasking_response: Dist = Dist("lognormal", (8.0, 0.5))
    tasking_duration: Dist = Dist("lognormal", (5.3, 0.4))
    # fingerprint tag kept at profile level; trace columns stay byte counts
    tls_profile: str = "generic-tls-client"


@dataclass(frozen=True)
class ChaffModel:
    per_hour: float
    horizon_ms: int

    def __post_init__(self):
        if self.per_hour < 0:
            raise ValueError("per_hour must be non-negative")


@dataclass(frozen=True)
class WorkdayModel:
    """Benign user population: sessions inside working hours with a capped
    fraction allowed outside them."""

    horizon_ms: int
    sessions_per_day: Dist = Dist("uniform", (3.0, 7.0))
    flows_per_session: Dist = Dist("uniform", (3.0, 12.0))
    flow_gap: Dist = Dist("exponential", (20000.0,))
    request_size: Dist = Dist("lognormal", (7.5, 0.9))
    response_size: Dist = Dist("lognormal", (9.0, 1.1))
    duration: Dist = Dist("lognormal", (7.0, 0.8))
    workday_start_hour: int = 9
    workday_end_hour: int = 17
    off_hours_fraction: float = 0.1
    destinations: tuple[str, ...] = (DST_PLANNER, "svc-mail", "svc-repo", "svc-files")

    def __post_init__(self):
        if not (0 <= self.workday_start_hour < self.workday_end_hour <= 24):
            raise ValueError("need 0 <= start < end <= 24")
        if not (0.0 <= self.off_hours_fraction <= 1.0):
            raise ValueError("off_hours_fraction must be in [0, 1]")


def _size(stream: RngStream, dist: Dist) -> int:
    return max(1, int(round(draw(stream, dist))))


def _dur(stream: RngStream, dist: Dist) -> int:
    return max(0, int(round(draw(stream, dist))))


# -- beacons -------------------------------------------------------------------


def beacon_ticks(cfg: BeaconConfig, stream: RngStream) -> list[int]:
    """Anchored jittered schedule: tick k sits at k*interval + delta_k with
    |delta_k| <= jitter*interval/2.

    Anchoring each tick to its grid slot (instead of accumulating per-gap
    noise) keeps every inter-arrival inside interval*(1 +/- jitter) and pins
    the tick count to floor(horizon/interval) plus or minus one.
    """
    half = cfg.jitter_fraction * cfg.interval_ms / 2.0
    ticks = []
    k = 1
    while True:
        anchor = k * cfg.interval_ms
        if anchor > cfg.horizon_ms + half:
            break
        delta = int(round((2.0 * stream.unit() - 1.0) * half))
        t = anchor + delta
        if 0 <= t <= cfg.horizon_ms:
            ticks.append(t)
        k += 1
    return ticks


def flows_at_ticks(ticks: Iterable[int], cfg: BeaconConfig,
                   stream: RngStream) -> list[FlowRecord]:
    return [FlowRecord(ts_start=t, duration=_dur(stream, cfg.duration),
                       src=cfg.src, dst=cfg.dst, dst_class=DST_HUB,
                       bytes_initiator=_size(stream, cfg.request_size),
                       bytes_responder=_size(stream, cfg.response_size),
                       leg=LEG_TASKING, label=LABEL_BEACON)
            for t in ticks]


def synth_beacon_trace(cfg: BeaconConfig, stream: RngStream) -> list[FlowRecord]:
    return flows_at_ticks(beacon_ticks(cfg, stream), cfg, stream)


# -- event-driven hub contact ----------------------------------------------------


def synth_event_flows(journal_records: Iterable[dict], profile: ChannelProfile,
                      streams: Callable[[str], RngStream],
                      hub_id: str = DST_HUB) -> list[FlowRecord]:
    """One tasking-leg flow per fetch and per submit record in the journal.

    The flow source is the registering entity, recovered from register
    records, so channels group by implant rather than by hub-issued id.
    """
    entity_of: dict[str, str] = {}
    flows: list[FlowRecord] = []
    for rec in journal_records:
        kind = rec["record_kind"]
        body = rec["body"]
        if kind == "register":
            entity_of[body["agent_id"]] = body["entity"]
            continue
        if kind not in ("fetch", "submit"):
            continue
        entity = entity_of[body["agent_id"]]
        st = streams(f"{entity}/tasking-bytes")
        flows.append(FlowRecord(
            ts_start=rec["time_ms"],
            duration=_dur(st, profile.tasking_duration),
            src=entity, dst=hub_id, dst_class=DST_HUB,
            bytes_initiator=_size(st, profile.tasking_request),
            bytes_responder=_size(st, profile.tasking_response),
            leg=LEG_TASKING, label=LABEL_EVENT))
    return flows


# -- reasoning sessions -----------------------------------------------------------


def synth_reasoning_nonstreaming(turns: int, profile: ChannelProfile,
                                 stream: RngStream, *, t_start: int, src: str,
                                 dst: str = DST_PLANNER) -> list[FlowRecord]:
    """Request-per-turn session: initiator bytes grow monotonically because
    each turn resends the accumulated context, and the final response is the
    enlarged summary."""
    if turns < 1:
        raise ValueError("a session has at least one turn")
    flows = []
    t = t_start
    req = _size(stream, profile.request_size)
    for turn in range(turns):
        last = turn == turns - 1
        resp_dist = profile.summary_response if last else profile.response_size
        flows.append(FlowRecord(
            ts_start=t, duration=_dur(stream, profile.duration),
            src=src, dst=dst, dst_class=DST_PLANNER,
            bytes_initiator=req,
            bytes_responder=_size(stream, resp_dist),
            leg=LEG_REASONING, label=LABEL_EVENT))
        if not last:
            req += max(0, int(round(draw(stream, profile.context_growth))))
            t += max(1, int(round(draw(stream, profile.turn_gap))))
    return flows


def synth_reasoning_streaming(session_length_ms: int, profile: ChannelProfile,
                              stream: RngStream, *, t_start: int, src: str,
                              dst: str = DST_PLANNER) -> list[FlowRecord]:
    """Streaming session: an irregular burst train, bidirectional throughout."""
    if session_length_ms < 0:
        raise ValueError("session length must be non-negative")
    n = max(1, int(round(draw(stream, profile.burst_count))))
    flows = []
    t = t_start
    deadline = t_start + session_length_ms
    for _ in range(n):
        if t > deadline:
            break
        flows.append(FlowRecord(
            ts_start=t, duration=_dur(stream, profile.duration),
            src=src, dst=dst, dst_class=DST_PLANNER,
            bytes_initiator=_size(stream, profile.burst_size),
            bytes_responder=_size(stream, profile.burst_size),
            leg=LEG_REASONING, label=LABEL_EVENT))
        t += max(1, int(round(draw(stream, profile.burst_interval))))
    return flows


# -- chaff and background ----------------------------------------------------------


def synth_chaff(model: ChaffModel, profile: ChannelProfile, stream: RngStream,
                *, src: str, dst: str = DST_PLANNER) -> list[FlowRecord]:
    """Genuinely benign-shaped decoy queries at a configured hourly rate."""
    if model.per_hour == 0:
        return []
    gap = Dist("exponential", (3_600_000.0 / model.per_hour,))
    flows = []
    t = int(round(draw(stream, gap)))
    while t <= model.horizon_ms:
        flows.append(FlowRecord(
            ts_start=t, duration=_dur(stream, profile.duration),
            src=src, dst=dst, dst_class=DST_PLANNER,
            bytes_initiator=_size(stream, profile.request_size),
            bytes_responder=_size(stream, profile.response_size),
            leg=LEG_REASONING, label=LABEL_CHAFF))
        t += max(1, int(round(draw(stream, gap))))
    return flows


_DAY_MS = 86_400_000
_HOUR_MS = 3_600_000


def _in_workday(t: int, model: WorkdayModel) -> bool:
    hour_ms = t % _DAY_MS
    return (model.workday_start_hour * _HOUR_MS <= hour_ms
            < model.workday_end_hour * _HOUR_MS)


def synth_background(n_users: int, model: WorkdayModel,
                     streams: Callable[[str], RngStream]) -> list[FlowRecord]:
    """Benign user population traffic.

    Sessions land inside working hours by default; a session may start in the
    off-hours region only while the user's off-hours flow share stays at or
    under the configured fraction, which makes the cap a hard bound rather
    than an expectation.
    """
    if n_users < 0:
        raise ValueError("n_users must be non-negative")
    flows: list[FlowRecord] = []
    days = max(1, -(-model.horizon_ms // _DAY_MS))  # ceil division
    work_start = model.workday_start_hour * _HOUR_MS
    work_len = (model.workday_end_hour - model.workday_start_hour) * _HOUR_MS
    for i in range(n_users):
        st = streams(f"user-{i}/background")
        src = f"user-{i}"
        on_count = 0
        off_count = 0
        for day in range(days):
            day_base = day * _DAY_MS
            sessions = max(0, int(round(draw(st, model.sessions_per_day))))
            for _ in range(sessions):
                want_off = st.unit() < model.off_hours_fraction
                # admit an off-hours session only if the running share allows it
                n_flows = max(1, int(round(draw(st, model.flows_per_session))))
                if want_off and ((off_count + n_flows)
                                 / max(1, on_count + off_count + n_flows)
                                 <= model.off_hours_fraction):
                    off_len = _DAY_MS - work_len
                    pos = int(st.unit() * off_len)
                    start_in_day = pos if pos < work_start else pos + work_len
                    window_end = (work_start if pos < work_start else _DAY_MS)
                    is_off = True
                else:
                    start_in_day = work_start + int(st.unit() * work_len)
                    window_end = work_start + work_len
                    is_off = False
                dst = model.destinations[
                    int(draw(st, Dist("choice", (0.4,) + (0.2,) * (len(model.destinations) - 1))))]
                dst_class = DST_PLANNER if dst == DST_PLANNER else DST_BENIGN
                t = day_base + start_in_day
                end = day_base + window_end
                for _ in range(n_flows):
                    if t >= end or t > model.horizon_ms:
                        break
                    flows.append(FlowRecord(
                        ts_start=t, duration=_dur(st, model.duration),
                        src=src, dst=dst, dst_class=dst_class,
                        bytes_initiator=_size(st, model.request_size),
                        bytes_responder=_size(st, model.response_size),
                        leg=LEG_BACKGROUND, label=LABEL_BENIGN))
                    if is_off:
                        off_count += 1
                    else:
                        on_count += 1
                    t += max(1, int(round(draw(st, model.flow_gap))))
    return flows


# -- merge and I/O -------------------------------------------------------------------


def merge_traces(*traces: Iterable[FlowRecord]) -> list[FlowRecord]:
    """Stable merge ordered by (ts_start, src, dst)."""
    return sorted(itertools.chain(*traces),
                  key=lambda f: (f.ts_start, f.src, f.dst))


def _flow_row(f: FlowRecord) -> list:
    return [f.ts_start, f.duration, f.src, f.dst, f.dst_class,
            f.bytes_initiator, f.bytes_responder, f.leg, f.label]


def write_trace(path, flows: Iterable[FlowRecord], fmt: str = "csv") -> None:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for f in flows:
            w.writerow(_flow_row(f))
        data = buf.getvalue()
    elif fmt == "jsonl":
        data = "".join(
            json.dumps(dict(zip(TRACE_COLUMNS, _flow_row(f))),
                       sort_keys=True, separators=(",", ":")) + "\n"
            for f in flows)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)


def _parse_row(values: dict, row_no: int) -> FlowRecord:
    try:
        return FlowRecord(
            ts_start=int(values["ts_start_ms"]),
            duration=int(values["duration_ms"]),
            src=str(values["src"]), dst=str(values["dst"]),
            dst_class=str(values["dst_class"]),
            bytes_initiator=int(values["bytes_init"]),
            bytes_responder=int(values["bytes_resp"]),
            leg=str(values["leg"]), label=str(values["label"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed trace row {row_no}: {exc}") from exc


def read_trace(path) -> list[FlowRecord]:
    """Load a trace written by write_trace; format is sniffed from content."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        head = fh.read(1)
        fh.seek(0)
        if head == "{":
            flows = []
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    values = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"malformed trace row {i}: {exc}") from exc
                flows.append(_parse_row(values, i))
            return flows
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"malformed trace row 1: header {header!r}")
        return [_parse_row(dict(zip(TRACE_COLUMNS, row)), i)
                for i, row in enumerate(reader, start=2)]
