"""Attack-pattern matching and scenario reconstruction over normalized logs.

Host firewall records are the authoritative evidence for the three attack
steps (135/TCP scan, 4444/TCP backdoor, 69/UDP payload pull). Security,
system and IDS records corroborate. Steps on one attacker/victim pair chain
only in order and only when each consecutive gap is within the step window.
"""

from __future__ import annotations

import enum
import logging
from bisect import bisect_left
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

from .ingest import Kind, NormalizedEvent
from .model import (
    BACKDOOR_PORT,
    SCAN_PORT,
    TFTP_PORT,
    AttackEdge,
    AttackStep,
    HostId,
    ScenarioGraph,
)

log = logging.getLogger(__name__)

ATTACKER_SIDE = "attacker"
VICTIM_SIDE = "victim"


@dataclass(frozen=True)
class PatternRules:
    step_window_s: float = 300.0
    ports: tuple = (SCAN_PORT, BACKDOOR_PORT, TFTP_PORT)
    image_names: frozenset = frozenset({"msblast.exe", "blaster.exe"})
    require_network_confirmation: bool = False

    def __post_init__(self):
        if self.step_window_s <= 0:
            raise ValueError("step_window_s must be > 0")
        if len(self.ports) != 3:
            raise ValueError("ports must list the scan, backdoor and transfer ports in order")

    @property
    def window(self) -> timedelta:
        return timedelta(seconds=self.step_window_s)

    def is_worm_image(self, path: str) -> bool:
        base = path.replace("/", "\\").rsplit("\\", 1)[-1]
        return base.strip().lower() in self.image_names


class Pattern(enum.Enum):
    AttackerPattern = "AttackerPattern"
    VictimPattern = "VictimPattern"
    MultiStepPattern = "MultiStepPattern"


@dataclass(frozen=True)
class PatternMatch:
    pattern: Pattern
    host: HostId
    evidence: tuple
    # one counterpart for attacker/victim patterns; (upstream, downstream)
    # for multi-step
    counterparts: tuple = ()
    steps: tuple = ()  # ((AttackStep, datetime), ...) of the core chain

    @property
    def counterpart(self) -> Optional[HostId]:
        return self.counterparts[0] if self.counterparts else None


# -- host directory -----------------------------------------------------------


class HostDirectory:
    """Name/address book for the hosts under analysis.

    Built from an inventory when one is supplied, otherwise inferred from the
    firewall logs (OPEN records carry the logging host as source, OPEN-INBOUND
    records as destination).
    """

    def __init__(self, hosts):
        self.hosts = sorted(set(hosts), key=lambda h: h.ip)
        self.by_ip = {h.ip: h for h in self.hosts}
        self.by_name = {h.name: h for h in self.hosts}

    @classmethod
    def from_stream(cls, stream, inventory=None) -> "HostDirectory":
        if inventory is not None:
            return cls(inventory)
        votes = defaultdict(Counter)
        for e in stream:
            if e.kind is Kind.FwOpen:
                votes[e.origin_host][e.src_ip] += 1
            elif e.kind is Kind.FwOpenInbound:
                votes[e.origin_host][e.dst_ip] += 1
        hosts = []
        for name, c in votes.items():
            ip = min(c, key=lambda a: (-c[a], a))
            hosts.append(HostId(ip, name))
        return cls(hosts)


# -- step evidence ------------------------------------------------------------


@dataclass
class PairEvidence:
    # step -> side -> {time: [events]}
    steps: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(dict)))
    ids: list = field(default_factory=list)

    def times(self, step: AttackStep, sides=(ATTACKER_SIDE, VICTIM_SIDE)) -> list:
        out = set()
        for side in sides:
            out.update(self.steps[step][side])
        return sorted(out)

    def records(self, step: AttackStep, t: datetime, sides=(ATTACKER_SIDE, VICTIM_SIDE)) -> list:
        out = []
        for side in sides:
            out.extend(self.steps[step][side].get(t, []))
        return out

    @property
    def has_host_evidence(self) -> bool:
        return any(self.steps[s][side] for s in AttackStep for side in (ATTACKER_SIDE, VICTIM_SIDE))


def _step_of(e: NormalizedEvent, rules: PatternRules) -> Optional[AttackStep]:
    scan, backdoor, tftp = rules.ports
    for step, port in zip(AttackStep, (scan, backdoor, tftp)):
        if e.dst_port == port.number and e.proto == port.protocol.value:
            return step
    return None


def collect_evidence(stream, directory: HostDirectory, rules: PatternRules) -> dict:
    """Per (attacker, victim) pair: firewall step records and IDS alerts."""
    pairs = defaultdict(PairEvidence)
    for e in stream:
        if e.kind in (Kind.FwOpen, Kind.FwOpenInbound):
            me = directory.by_name.get(e.origin_host)
            step = _step_of(e, rules)
            if me is None or step is None:
                continue
            if e.kind is Kind.FwOpen and e.src_ip != me.ip:
                continue
            if e.kind is Kind.FwOpenInbound and e.dst_ip != me.ip:
                continue
            if step is AttackStep.ImpactEffect:
                # victim pulls from the attacker: the connection runs victim -> attacker
                att, vic = directory.by_ip.get(e.dst_ip), directory.by_ip.get(e.src_ip)
                side = ATTACKER_SIDE if e.kind is Kind.FwOpenInbound else VICTIM_SIDE
            else:
                att, vic = directory.by_ip.get(e.src_ip), directory.by_ip.get(e.dst_ip)
                side = ATTACKER_SIDE if e.kind is Kind.FwOpen else VICTIM_SIDE
            if att is None or vic is None or att == vic:
                continue
            pairs[(att, vic)].steps[step][side].setdefault(e.t, []).append(e)
        elif e.kind is Kind.IdsPortsweep:
            att, vic = directory.by_ip.get(e.src_ip), directory.by_ip.get(e.dst_ip)
            if att is not None and vic is not None and att != vic:
                pairs[(att, vic)].ids.append(e)
        elif e.kind is Kind.IdsTftpGet:
            att, vic = directory.by_ip.get(e.dst_ip), directory.by_ip.get(e.src_ip)
            if att is not None and vic is not None and att != vic:
                pairs[(att, vic)].ids.append(e)
    return pairs


def _near(times: list, t: datetime, window: timedelta) -> bool:
    i = bisect_left(times, t - window)
    return i < len(times) and times[i] <= t + window


def _latest_before(times: list, t: datetime, window: timedelta) -> Optional[datetime]:
    i = bisect_left(times, t) - 1
    if i >= 0 and t - times[i] <= window:
        return times[i]
    return None


def best_chain(scans: list, exploits: list, transfers: list, window: timedelta) -> list:
    """Longest in-order step chain, earliest start among equals.

    A step links to the latest earlier step of the previous kind; because
    that step is the closest one, the chain exists whenever any in-window
    predecessor exists, so removing records can only shorten the result.
    """
    linked_exploits = []
    for e in exploits:
        s = _latest_before(scans, e, window)
        if s is not None:
            linked_exploits.append(e)
    linked = {e: _latest_before(scans, e, window) for e in linked_exploits}
    full = []
    for x in transfers:
        e = _latest_before(linked_exploits, x, window)
        if e is not None:
            full.append((linked[e], e, x))
    if full:
        s, e, x = min(full)
        return [(AttackStep.Scan, s), (AttackStep.Exploit, e), (AttackStep.ImpactEffect, x)]
    if linked_exploits:
        s, e = min((linked[e], e) for e in linked_exploits)
        return [(AttackStep.Scan, s), (AttackStep.Exploit, e)]
    if scans:
        return [(AttackStep.Scan, scans[0])]
    return []


def _confirmation(stream, directory: HostDirectory):
    """Portsweep times per source host and TFTP Get times per (attacker, victim)."""
    sweeps = defaultdict(list)
    gets = defaultdict(list)
    for e in stream:
        if e.kind is Kind.IdsPortsweep and e.src_ip in directory.by_ip:
            sweeps[directory.by_ip[e.src_ip]].append(e.t)
        elif e.kind is Kind.IdsTftpGet:
            att, vic = directory.by_ip.get(e.dst_ip), directory.by_ip.get(e.src_ip)
            if att is not None and vic is not None:
                gets[(att, vic)].append(e.t)
    for d in (sweeps, gets):
        for v in d.values():
            v.sort()
    return sweeps, gets


class _Context:
    """Everything derived once from a stream and shared by the matchers."""

    def __init__(self, stream, rules: PatternRules, inventory=None):
        self.stream = list(stream)
        self.rules = rules
        self.directory = HostDirectory.from_stream(self.stream, inventory)
        self.pairs = collect_evidence(self.stream, self.directory, rules)
        self.sweeps, self.gets = _confirmation(self.stream, self.directory)

    def chain(self, pair, sides) -> list:
        ev = self.pairs[pair]
        w = self.rules.window
        scans = ev.times(AttackStep.Scan, sides)
        exploits = ev.times(AttackStep.Exploit, sides)
        transfers = ev.times(AttackStep.ImpactEffect, sides)
        if self.rules.require_network_confirmation:
            sweeps = self.sweeps.get(pair[0], [])
            gets = self.gets.get(pair, [])
            scans = [t for t in scans if _near(sweeps, t, w)]
            transfers = [t for t in transfers if _near(gets, t, w)]
        return best_chain(scans, exploits, transfers, w)

    def host_events(self, host: HostId, kinds) -> list:
        return [e for e in self.stream if e.origin_host == host.name and e.kind in kinds]

    def ids_events(self, kind, src=None, dst=None) -> list:
        return [e for e in self.stream if e.kind is kind
                and (src is None or e.src_ip == src.ip) and (dst is None or e.dst_ip == dst.ip)]


def _within(events, t: datetime, window: timedelta, after_only=False) -> list:
    lo = t if after_only else t - window
    return [e for e in events if lo <= e.t <= t + window]


def _core_evidence(ctx: _Context, pair, chain, side) -> list:
    ev = ctx.pairs[pair]
    out = []
    for step, t in chain:
        out.extend(ev.records(step, t, (side,)))
    return out


def _sorted_evidence(events) -> tuple:
    seen = {}
    for e in events:
        seen.setdefault((e.source, e.line, e), e)
    return tuple(sorted(seen.values(), key=lambda e: (e.t, e.origin_host, e.kind, e.source, e.line)))


def _full_matches(ctx: _Context, side: str) -> list:
    out = []
    for pair in sorted(ctx.pairs, key=lambda p: (p[0].ip, p[1].ip)):
        chain = ctx.chain(pair, (side,))
        if len(chain) == 3:
            out.append((pair, chain))
    return out


def _attacker_matches(ctx: _Context) -> list:
    rules, w = ctx.rules, ctx.rules.window
    out = []
    for (att, vic), chain in _full_matches(ctx, ATTACKER_SIDE):
        evidence = _core_evidence(ctx, (att, vic), chain, ATTACKER_SIDE)
        evidence += [e for e in ctx.host_events(att, (Kind.ProcCreate,)) if rules.is_worm_image(e.detail)]
        evidence += _within(ctx.ids_events(Kind.IdsPortsweep, src=att), chain[0][1], w)
        out.append(PatternMatch(Pattern.AttackerPattern, att, _sorted_evidence(evidence), (vic,), tuple(chain)))
    return out


def _victim_matches(ctx: _Context) -> list:
    rules, w = ctx.rules, ctx.rules.window
    out = []
    for (att, vic), chain in _full_matches(ctx, VICTIM_SIDE):
        done = chain[-1][1]
        evidence = _core_evidence(ctx, (att, vic), chain, VICTIM_SIDE)
        impact = ctx.host_events(vic, (Kind.RpcTerminated, Kind.Reboot))
        impact += [e for e in ctx.host_events(vic, (Kind.ProcCreate,)) if rules.is_worm_image(e.detail)]
        evidence += _within(impact, done, w, after_only=True)
        evidence += _within(ctx.ids_events(Kind.IdsTftpGet, src=vic, dst=att), done, w)
        out.append(PatternMatch(Pattern.VictimPattern, vic, _sorted_evidence(evidence), (att,), tuple(chain)))
    return out


def match_attacker(stream, rules: PatternRules = PatternRules(), inventory=None) -> list:
    """AttackerPattern per (attacker, victim) with a full chain in the attacker's own log."""
    return _attacker_matches(_Context(stream, rules, inventory))


def match_victim(stream, rules: PatternRules = PatternRules(), inventory=None) -> list:
    """VictimPattern per (victim, attacker) with a full chain in the victim's own log."""
    return _victim_matches(_Context(stream, rules, inventory))


def match_multistep(attacker_matches, victim_matches, rules: PatternRules = PatternRules()) -> list:
    """Hosts fully infected by an upstream attacker that later attack downstream.

    The victim phase must complete (payload pulled) strictly before the
    attacker phase's first scan.
    """
    out = []
    for vm in victim_matches:
        done = vm.steps[-1][1]
        for am in attacker_matches:
            if am.host != vm.host or done >= am.steps[0][1]:
                continue
            evidence = _sorted_evidence(list(vm.evidence) + list(am.evidence))
            out.append(PatternMatch(Pattern.MultiStepPattern, vm.host, evidence,
                                    (vm.counterpart, am.counterpart),
                                    tuple(vm.steps) + tuple(am.steps)))
    out.sort(key=lambda m: (m.host.ip, m.counterparts[0].ip, m.counterparts[1].ip))
    return out


@dataclass
class Analysis:
    graph: ScenarioGraph
    attacker: list
    victim: list
    multistep: list
    rules: PatternRules
    hosts: list
    orphans: list = field(default_factory=list)  # pairs with steps but no scan


def analyze(stream, rules: PatternRules = PatternRules(), inventory=None) -> Analysis:
    ctx = _Context(stream, rules, inventory)
    edges = []
    orphans = []
    for pair in sorted(ctx.pairs, key=lambda p: (p[0].ip, p[1].ip)):
        ev = ctx.pairs[pair]
        chain = ctx.chain(pair, (ATTACKER_SIDE, VICTIM_SIDE)) if ev.has_host_evidence else []
        if chain:
            edges.append(AttackEdge(pair[0], pair[1], chain))
        elif ev.ids:
            first = min(e.t for e in ev.ids)
            edges.append(AttackEdge(pair[0], pair[1], [(AttackStep.Scan, first)], network_only=True))
        else:
            orphans.append(pair)
    graph = ScenarioGraph.build(edges, ctx.directory.hosts)
    attacker = _attacker_matches(ctx)
    victim = _victim_matches(ctx)
    return Analysis(graph, attacker, victim, match_multistep(attacker, victim, rules), rules,
                    ctx.directory.hosts, orphans)


def build_scenario(stream, rules: PatternRules = PatternRules(), inventory=None) -> ScenarioGraph:
    return analyze(stream, rules, inventory).graph
