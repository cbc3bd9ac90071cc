"""Domain types shared by the simulator and the analyzer.

Everything here is an immutable value type. Scenario graphs serialize to a
canonical JSON shape (used both for simulator truth and analyzer output, so
the two can be diffed directly) and to Graphviz DOT.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime
from ipaddress import IPv4Address, IPv4Network, ip_address, ip_network
from typing import Iterable, Mapping, Optional

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"


class OsKind(enum.Enum):
    Windows2000 = "Windows2000"
    WindowsXP = "WindowsXP"
    Other = "Other"


class Protocol(enum.Enum):
    TCP = "TCP"
    UDP = "UDP"


@dataclass(frozen=True, order=True)
class PortSpec:
    number: int
    protocol: Protocol

    def __post_init__(self):
        if not 1 <= self.number <= 65535:
            raise ValueError(f"port out of range: {self.number}")

    @classmethod
    def parse(cls, text: str) -> "PortSpec":
        """Parse ``"135/tcp"`` style port notation."""
        num, _, proto = text.strip().partition("/")
        if not proto:
            raise ValueError(f"port needs a protocol suffix: {text!r}")
        return cls(int(num), Protocol(proto.upper()))

    def __str__(self):
        return f"{self.number}/{self.protocol.value}"


SCAN_PORT = PortSpec(135, Protocol.TCP)
BACKDOOR_PORT = PortSpec(4444, Protocol.TCP)
TFTP_PORT = PortSpec(69, Protocol.UDP)
WORM_PORTS = frozenset({SCAN_PORT, BACKDOOR_PORT, TFTP_PORT})


@dataclass(frozen=True, order=True)
class HostId:
    ip: IPv4Address
    name: str

    def __post_init__(self):
        if not isinstance(self.ip, IPv4Address):
            object.__setattr__(self, "ip", IPv4Address(self.ip))
        if not self.name:
            raise ValueError("host name must be non-empty")

    def __str__(self):
        return f"{self.name}({self.ip})"


@dataclass(frozen=True)
class Host:
    id: HostId
    os: OsKind = OsKind.WindowsXP
    vulnerable_ports: frozenset = WORM_PORTS
    initially_infected: bool = False
    # hosts without log collection (servers outside the study) still take part
    # in propagation but produce no host log set
    collect_logs: bool = True

    @property
    def name(self) -> str:
        return self.id.name

    @property
    def ip(self) -> IPv4Address:
        return self.id.ip


@dataclass(frozen=True)
class NetworkTopology:
    hosts: tuple
    subnets: tuple
    trust: frozenset = frozenset()
    ids_sensors: tuple = ()

    def host_by_ip(self) -> dict:
        return {h.ip: h for h in self.hosts}

    def host_by_name(self) -> dict:
        return {h.name: h for h in self.hosts}

    @property
    def origins(self) -> list:
        return [h for h in self.hosts if h.initially_infected]

    def subnet_of(self, ip: IPv4Address) -> Optional[IPv4Network]:
        for net in self.subnets:
            if ip in net:
                return net
        return None


class AttackStep(enum.IntEnum):
    Scan = 1
    Exploit = 2
    ImpactEffect = 3


STEP_ORDER = (AttackStep.Scan, AttackStep.Exploit, AttackStep.ImpactEffect)


class EdgeStatus(enum.Enum):
    ScanOnly = "ScanOnly"
    BackdoorOnly = "BackdoorOnly"
    FullyInfected = "FullyInfected"

    @property
    def rank(self) -> int:
        return _STATUS_RANK[self]


_STATUS_RANK = {EdgeStatus.ScanOnly: 1, EdgeStatus.BackdoorOnly: 2, EdgeStatus.FullyInfected: 3}


class HostRole(enum.Enum):
    Attacker = "Attacker"
    Victim = "Victim"
    AttackerVictim = "AttackerVictim"
    Unaffected = "Unaffected"


class IllegalStepSet(ValueError):
    pass


def edge_status(steps: Iterable[AttackStep]) -> EdgeStatus:
    """Map a set of achieved attack steps to an edge status.

    Only the three prefixes of Scan < Exploit < ImpactEffect are legal.
    """
    got = frozenset(steps)
    if not got:
        raise IllegalStepSet("empty step set")
    n = len(got)
    if got != frozenset(STEP_ORDER[:n]):
        names = sorted(s.name for s in got)
        raise IllegalStepSet(f"steps {names} are not a prefix of Scan < Exploit < ImpactEffect")
    return (EdgeStatus.ScanOnly, EdgeStatus.BackdoorOnly, EdgeStatus.FullyInfected)[n - 1]


@dataclass(frozen=True)
class AttackEdge:
    attacker: HostId
    victim: HostId
    steps: tuple  # ((AttackStep, datetime), ...)
    network_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        kinds = [s for s, _ in self.steps]
        if tuple(kinds) != STEP_ORDER[: len(kinds)] or not kinds:
            raise IllegalStepSet(f"edge {self.attacker}->{self.victim}: steps {kinds} out of order")
        times = [t for _, t in self.steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"edge {self.attacker}->{self.victim}: step times not strictly increasing")

    @property
    def status(self) -> EdgeStatus:
        return edge_status(s for s, _ in self.steps)

    def time_of(self, step: AttackStep) -> Optional[datetime]:
        for s, t in self.steps:
            if s == step:
                return t
        return None

    @property
    def key(self):
        return (self.attacker.ip, self.victim.ip)


def assign_roles(edges: Iterable[AttackEdge], hosts: Iterable[HostId]) -> dict:
    """Classify every host as Attacker, Victim, AttackerVictim or Unaffected.

    A host that is hit (BackdoorOnly or FullyInfected) and also attacks is an
    AttackerVictim only when one of its inbound full infections completed
    before its earliest outbound scan; otherwise it is treated as an Attacker.
    """
    edges = list(edges)
    roles = {h: HostRole.Unaffected for h in hosts}
    first_out_scan = {}
    for e in edges:
        t = e.time_of(AttackStep.Scan)
        prev = first_out_scan.get(e.attacker)
        if prev is None or t < prev:
            first_out_scan[e.attacker] = t
    for h in set(roles) | {e.attacker for e in edges} | {e.victim for e in edges}:
        inbound = [e for e in edges if e.victim == h]
        hit = any(e.status is not EdgeStatus.ScanOnly for e in inbound)
        attacks = h in first_out_scan
        if attacks and hit:
            full_before = any(
                e.status is EdgeStatus.FullyInfected
                and e.time_of(AttackStep.ImpactEffect) < first_out_scan[h]
                for e in inbound
            )
            roles[h] = HostRole.AttackerVictim if full_before else HostRole.Attacker
        elif hit:
            roles[h] = HostRole.Victim
        elif attacks:
            roles[h] = HostRole.Attacker
        else:
            roles[h] = HostRole.Unaffected
    return roles


@dataclass(frozen=True)
class ScenarioGraph:
    edges: tuple
    roles: Mapping = field(default_factory=dict)

    @classmethod
    def build(cls, edges: Iterable[AttackEdge], hosts: Iterable[HostId]) -> "ScenarioGraph":
        edges = tuple(sorted(edges, key=lambda e: e.key))
        return cls(edges, assign_roles(edges, hosts))

    def edge(self, attacker: str, victim: str) -> Optional[AttackEdge]:
        for e in self.edges:
            if e.attacker.name == attacker and e.victim.name == victim:
                return e
        return None

    def role_of(self, name: str) -> HostRole:
        for h, r in self.roles.items():
            if h.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        hosts = sorted(self.roles, key=lambda h: h.ip)
        return {
            "hosts": [{"name": h.name, "ip": str(h.ip), "role": self.roles[h].value} for h in hosts],
            "edges": [_edge_dict(e) for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_dot(self) -> str:
        return scenario_dot(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioGraph":
        ids = {}
        roles = {}
        for h in data["hosts"]:
            hid = HostId(IPv4Address(h["ip"]), h["name"])
            ids[h["name"]] = hid
            roles[hid] = HostRole(h["role"])
        edges = []
        for e in data["edges"]:
            att = ids.get(e["attacker"]) or HostId(IPv4Address(e["attacker_ip"]), e["attacker"])
            vic = ids.get(e["victim"]) or HostId(IPv4Address(e["victim_ip"]), e["victim"])
            steps = [(AttackStep[s["step"]], datetime.strptime(s["time"], TIME_FORMAT)) for s in e["steps"]]
            edges.append(AttackEdge(att, vic, steps, e.get("network_only", False)))
        return cls(tuple(sorted(edges, key=lambda x: x.key)), roles)


def _edge_dict(e: AttackEdge) -> dict:
    return {
        "attacker": e.attacker.name,
        "attacker_ip": str(e.attacker.ip),
        "victim": e.victim.name,
        "victim_ip": str(e.victim.ip),
        "status": e.status.value,
        "ports": [str(p) for p in (SCAN_PORT, BACKDOOR_PORT, TFTP_PORT)[: len(e.steps)]],
        "steps": [{"step": s.name, "time": t.strftime(TIME_FORMAT)} for s, t in e.steps],
        "network_only": e.network_only,
    }


_DOT_STYLE = {"ScanOnly": "dotted", "BackdoorOnly": "dashed", "FullyInfected": "solid"}


def scenario_dot(data: dict) -> str:
    lines = ["digraph scenario {", "  rankdir=LR;", "  node [shape=box];"]
    for h in data["hosts"]:
        lines.append(f'  "{h["name"]}" [label="{h["name"]}\\n{h["ip"]}\\n{h["role"]}"];')
    for e in data["edges"]:
        marks = ",".join(p.split("/")[0] for p in e["ports"])
        lines.append(
            f'  "{e["attacker"]}" -> "{e["victim"]}" '
            f'[label="{marks}", style={_DOT_STYLE[e["status"]]}];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def diff_graphs(a: dict, b: dict) -> list:
    """Line-per-difference comparison of two serialized scenario graphs."""
    out = []
    ra = {h["name"]: h["role"] for h in a.get("hosts", [])}
    rb = {h["name"]: h["role"] for h in b.get("hosts", [])}
    for name in sorted(set(ra) | set(rb)):
        if ra.get(name) != rb.get(name):
            out.append(f"role {name}: {ra.get(name, '-')} != {rb.get(name, '-')}")
    ea = {(e["attacker"], e["victim"]): e for e in a.get("edges", [])}
    eb = {(e["attacker"], e["victim"]): e for e in b.get("edges", [])}
    for key in sorted(set(ea) | set(eb)):
        x, y = ea.get(key), eb.get(key)
        label = f"{key[0]}->{key[1]}"
        if x is None:
            out.append(f"edge {label}: only in second ({y['status']})")
        elif y is None:
            out.append(f"edge {label}: only in first ({x['status']})")
        elif x["status"] != y["status"]:
            out.append(f"edge {label}: status {x['status']} != {y['status']}")
        elif x != y:
            out.append(f"edge {label}: step evidence differs")
    return out


# -- topology validation ----------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # DuplicateIp, DuplicateName, IpOutsideSubnets, NoOrigin, ...
    host: Optional[str]
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


class TopologyError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def topology_violations(t: NetworkTopology) -> list:
    out = []
    seen_ip, seen_name = set(), set()
    for h in t.hosts:
        if h.ip in seen_ip:
            out.append(Violation("DuplicateIp", str(h.ip), f"{h.ip} assigned more than once"))
        if h.name in seen_name:
            out.append(Violation("DuplicateName", h.name, f"host name {h.name} used more than once"))
        seen_ip.add(h.ip)
        seen_name.add(h.name)
        nets = [n for n in t.subnets if h.ip in n]
        if len(nets) != 1:
            out.append(Violation("IpOutsideSubnets", h.name,
                                 f"{h.name} ({h.ip}) is in {len(nets)} listed subnets, expected 1"))
    for net in t.subnets:
        if net.prefixlen != 24:
            out.append(Violation("SubnetNotClassC", None, f"{net} is not a /24"))
    if not any(h.initially_infected for h in t.hosts):
        out.append(Violation("NoOrigin", None, "no host is marked initially_infected"))
    for a, b in sorted(t.trust):
        for n in (a, b):
            if n not in seen_name:
                out.append(Violation("UnknownTrustHost", n, f"trust pair ({a}, {b}) names unknown host {n}"))
    return out


def validate_topology(t: NetworkTopology) -> NetworkTopology:
    problems = topology_violations(t)
    if problems:
        raise TopologyError(problems)
    return t


def make_topology(hosts, subnets, trust=(), ids_sensors=()) -> NetworkTopology:
    """Convenience constructor accepting plain strings for addresses."""
    return NetworkTopology(
        hosts=tuple(hosts),
        subnets=tuple(ip_network(s) for s in subnets),
        trust=frozenset(tuple(p) for p in trust),
        ids_sensors=tuple(ids_sensors),
    )


def host(name: str, ip: str, os: OsKind = OsKind.WindowsXP, origin: bool = False, **kw) -> Host:
    return Host(HostId(ip_address(ip), name), os, initially_infected=origin, **kw)
