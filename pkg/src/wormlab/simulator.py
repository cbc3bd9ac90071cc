"""Seeded discrete-event simulation of Blaster-style propagation.

Time is kept in integer microseconds so that runs are exactly reproducible;
``SimEvent.t`` exposes it in seconds.
"""

from __future__ import annotations

import enum
import heapq
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from ipaddress import IPv4Address, IPv4Network, ip_network
from typing import Optional

from .model import (
    BACKDOOR_PORT,
    SCAN_PORT,
    TFTP_PORT,
    AttackEdge,
    AttackStep,
    EdgeStatus,
    Host,
    HostId,
    NetworkTopology,
    OsKind,
    PortSpec,
    ScenarioGraph,
    validate_topology,
)

US = 1_000_000
DEFAULT_BASE_TIME = datetime(2009, 7, 23, 10, 0, 0)


class InvalidConfig(ValueError):
    pass


class EventKind(enum.IntEnum):
    # value order doubles as the tie-break order for simultaneous events
    ScanProbe = 0
    BackdoorOpen = 1
    TftpTransfer = 2
    ImpactRpcTerminated = 3
    ImpactReboot = 4
    InfectionComplete = 5


EVENT_PORT = {
    EventKind.ScanProbe: SCAN_PORT,
    EventKind.BackdoorOpen: BACKDOOR_PORT,
    EventKind.TftpTransfer: TFTP_PORT,
    EventKind.ImpactRpcTerminated: SCAN_PORT,
    EventKind.ImpactReboot: SCAN_PORT,
    EventKind.InfectionComplete: SCAN_PORT,
}


@dataclass(frozen=True)
class SimEvent:
    t_us: int
    kind: EventKind
    src: HostId
    dst: HostId

    @property
    def t(self) -> float:
        return self.t_us / US

    @property
    def port(self) -> PortSpec:
        return EVENT_PORT[self.kind]

    def sort_key(self):
        return (self.t_us, int(self.src.ip), int(self.dst.ip), self.kind)


@dataclass
class SimConfig:
    seed: int = 0
    duration_s: float = 3600.0
    scan_interval_s: float = 1.0
    local_subnet_bias: float = 0.4
    p_infect: dict = field(default_factory=lambda: {
        OsKind.Windows2000: 0.20, OsKind.WindowsXP: 0.80, OsKind.Other: 0.0})
    p_transfer_success: float = 0.9
    exploit_delay_s: float = 2.0
    transfer_delay_s: float = 3.0
    impact_delay_s: float = 5.0
    # (attacker name, victim name) -> EdgeStatus
    forced_outcomes: dict = field(default_factory=dict)
    # applied to every pair absent from forced_outcomes; None means random
    forced_default: Optional[EdgeStatus] = None
    base_time: datetime = DEFAULT_BASE_TIME

    def problems(self) -> list:
        out = []
        probs = {"local_subnet_bias": self.local_subnet_bias,
                 "p_transfer_success": self.p_transfer_success}
        probs.update({f"p_infect[{k.value}]": v for k, v in self.p_infect.items()})
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                out.append(f"{name}={p} is not a probability")
        for name in ("scan_interval_s", "exploit_delay_s", "transfer_delay_s", "impact_delay_s"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be > 0")
        if self.duration_s < 0:
            out.append("duration_s must be >= 0")
        if not 0 <= self.seed < 2**64:
            out.append("seed must be a 64-bit unsigned integer")
        return out

    def validate(self) -> "SimConfig":
        problems = self.problems()
        if problems:
            raise InvalidConfig("; ".join(problems))
        return self

    def forced_for(self, attacker: HostId, victim: HostId) -> Optional[EdgeStatus]:
        return self.forced_outcomes.get((attacker.name, victim.name), self.forced_default)


def _us(seconds: float) -> int:
    return int(round(seconds * US))


# -- scanning ---------------------------------------------------------------


@dataclass
class ScanCursor:
    """Per-host position in the sequential /24 sweep."""
    base: Optional[IPv4Network] = None
    last: int = 0


def local_subnet(ip: IPv4Address) -> IPv4Network:
    return ip_network(f"{ip}/24", strict=False)


def next_scan_target(cursor: ScanCursor, host: Host, topology: NetworkTopology,
                     bias: float, rng: random.Random) -> IPv4Address:
    if cursor.base is None or cursor.last >= 254:
        if rng.random() < bias:
            cursor.base = local_subnet(host.ip)
        else:
            cursor.base = rng.choice(topology.subnets)
        cursor.last = 0
    cursor.last += 1
    return cursor.base.network_address + cursor.last


# -- single infection attempt -------------------------------------------------


def attempt_infection(attacker: HostId, victim: Host, t_us: int, cfg: SimConfig,
                      rng: random.Random, infected: bool = False) -> list:
    """Events for one probe of ``victim`` by ``attacker`` at ``t_us``.

    Both Bernoulli draws are always consumed so the random stream does not
    depend on forcing or on the victim's state.
    """
    u_exploit = rng.random()
    u_transfer = rng.random()
    events = [SimEvent(t_us, EventKind.ScanProbe, attacker, victim.id)]
    if infected:
        return events

    forced = cfg.forced_for(attacker, victim.id)
    if forced is not None:
        backdoor = forced.rank >= EdgeStatus.BackdoorOnly.rank
        transfer = forced is EdgeStatus.FullyInfected
    else:
        backdoor = u_exploit < cfg.p_infect.get(victim.os, 0.0)
        transfer = u_transfer < cfg.p_transfer_success
    if not (backdoor and SCAN_PORT in victim.vulnerable_ports
            and BACKDOOR_PORT in victim.vulnerable_ports):
        return events

    t_backdoor = t_us + _us(cfg.exploit_delay_s)
    events.append(SimEvent(t_backdoor, EventKind.BackdoorOpen, attacker, victim.id))
    if not (transfer and TFTP_PORT in victim.vulnerable_ports):
        return events

    t_transfer = t_backdoor + _us(cfg.transfer_delay_s)
    t_impact = t_transfer + _us(cfg.impact_delay_s)
    events.append(SimEvent(t_transfer, EventKind.TftpTransfer, attacker, victim.id))
    for kind in (EventKind.ImpactRpcTerminated, EventKind.ImpactReboot, EventKind.InfectionComplete):
        events.append(SimEvent(t_impact, kind, attacker, victim.id))
    return events


# -- full run -----------------------------------------------------------------


@dataclass
class SimResult:
    events: list
    truth: ScenarioGraph
    topology: NetworkTopology
    config: SimConfig


_STEP_OF = {
    EventKind.ScanProbe: AttackStep.Scan,
    EventKind.BackdoorOpen: AttackStep.Exploit,
    EventKind.TftpTransfer: AttackStep.ImpactEffect,
}


def _best_attempt(attempts: list) -> list:
    # longest step prefix wins; earliest attempt breaks ties
    return max(attempts, key=lambda a: (len(a), -a[0][1]))


def _graph_from_attempts(attempts: dict, topology: NetworkTopology, base: datetime) -> ScenarioGraph:
    edges = []
    for (att, vic), tries in attempts.items():
        best = _best_attempt(tries)
        steps = [(step, base + timedelta(microseconds=t)) for step, t in best]
        edges.append(AttackEdge(att, vic, steps))
    return ScenarioGraph.build(edges, [h.id for h in topology.hosts])


def simulate(topology: NetworkTopology, cfg: SimConfig) -> SimResult:
    validate_topology(topology)
    cfg.validate()
    names = topology.host_by_name()
    unknown = sorted({n for pair in cfg.forced_outcomes for n in pair if n not in names})
    if unknown:
        raise InvalidConfig(f"forced outcomes name unknown hosts: {', '.join(unknown)}")
    rng = random.Random(cfg.seed)
    hosts = topology.host_by_ip()
    duration = _us(cfg.duration_s)
    interval = _us(cfg.scan_interval_s)

    events = []
    attempts = {}  # (attacker, victim) -> [[(AttackStep, t_us), ...], ...]
    infected = set()
    cursors = {}
    queue = []
    for h in topology.origins:
        infected.add(h.ip)
        if duration > 0:
            events.append(SimEvent(0, EventKind.InfectionComplete, h.id, h.id))
            heapq.heappush(queue, (0, int(h.ip)))

    while queue:
        t, ip_int = heapq.heappop(queue)
        if t >= duration:
            break
        me = hosts[IPv4Address(ip_int)]
        heapq.heappush(queue, (t + interval, ip_int))
        target = next_scan_target(cursors.setdefault(me.ip, ScanCursor()), me, topology,
                                  cfg.local_subnet_bias, rng)
        if target == me.ip:
            continue
        victim = hosts.get(target)
        if victim is None:
            events.append(SimEvent(t, EventKind.ScanProbe, me.id, HostId(target, str(target))))
            continue
        full = attempt_infection(me.id, victim, t, cfg, rng, victim.ip in infected)
        if any(e.kind is EventKind.InfectionComplete for e in full):
            # claimed from the decision on; later probes are re-infection attempts
            infected.add(victim.ip)
        evs = [e for e in full if e.t_us < duration]
        events.extend(evs)
        steps = [(_STEP_OF[e.kind], e.t_us) for e in evs if e.kind in _STEP_OF]
        attempts.setdefault((me.id, victim.id), []).append(steps)
        if evs[-1].kind is EventKind.InfectionComplete:
            heapq.heappush(queue, (evs[-1].t_us + interval, int(victim.ip)))

    events.sort(key=SimEvent.sort_key)
    truth = _graph_from_attempts(attempts, topology, cfg.base_time)
    return SimResult(events, truth, topology, cfg)


def truth_from_events(events: list, topology: NetworkTopology, base: datetime) -> ScenarioGraph:
    """Rebuild the ground-truth graph from the event stream alone.

    Each ScanProbe opens an attempt on its (src, dst) pair; a BackdoorOpen
    extends the latest scan-only attempt of the pair, a TftpTransfer the
    latest attempt that stopped at the backdoor.
    """
    known = {h.id for h in topology.hosts}
    attempts = {}
    for e in sorted(events, key=SimEvent.sort_key):
        if e.kind not in _STEP_OF or e.dst not in known:
            continue
        tries = attempts.setdefault((e.src, e.dst), [])
        step = _STEP_OF[e.kind]
        if step is AttackStep.Scan:
            tries.append([(step, e.t_us)])
            continue
        for attempt in reversed(tries):
            if len(attempt) == step - 1:
                attempt.append((step, e.t_us))
                break
    return _graph_from_attempts(attempts, topology, base)
