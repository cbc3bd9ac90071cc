"""Render a simulated event stream into per-host logs and IDS alert logs.

Output layout of a run directory::

    hosts/<name>/firewall.log      personal firewall (pfirewall-like)
    hosts/<name>/security.csv      security events (592 process creation)
    hosts/<name>/system.csv        system events (RPC termination, reboot)
    hosts/<name>/application.log   application events (header only)
    ids/<sensor>/alert.log         IDS alerts, fast-alert style

The exact grammars are documented in ``wormlab formats``.
"""

from __future__ import annotations

from datetime import datetime, timedelta
from pathlib import Path

from .model import HostId, NetworkTopology
from .simulator import DEFAULT_BASE_TIME, EventKind, SimEvent

HOST_TIME = "%Y-%m-%d %H:%M:%S"
IDS_TIME = "%m/%d-%H:%M:%S.%f"

FIREWALL_HEADER = (
    "#Version: 1.5\n"
    "#Software: wormlab personal firewall\n"
    "#Time Format: Local\n"
    "#Fields: date time action protocol src-ip dst-ip src-port dst-port\n"
)
SECURITY_HEADER = "timestamp,event_id,category,detail\n"
SYSTEM_HEADER = "timestamp,event_code,message\n"
APPLICATION_HEADER = (
    "#Software: wormlab application log\n"
    "#Fields: date time source event_id message\n"
)
IDS_HEADER = "# wormlab IDS alert log (fast format)\n# sensor: {sensor}\n"

WORM_IMAGE = r"C:\WINDOWS\system32\msblast.exe"
SYSTEM_MESSAGES = {
    EventKind.ImpactRpcTerminated: (
        "RPC_TERMINATED", "The Remote Procedure Call (RPC) service terminated unexpectedly"),
    EventKind.ImpactReboot: ("SYSTEM_REBOOT", "Windows must now restart"),
}
PORTSWEEP_SIG = "(portscan) TCP Portsweep"
TFTP_SIG = "TFTP Get"

EPHEMERAL_FIRST = 1025
EPHEMERAL_LAST = 65535

_NETWORK_KINDS = (EventKind.ScanProbe, EventKind.BackdoorOpen, EventKind.TftpTransfer)


def wallclock(base: datetime, t_us: int) -> datetime:
    return base + timedelta(microseconds=t_us)


def initiator(e: SimEvent) -> HostId:
    """The host that opens the connection (the victim pulls the TFTP payload)."""
    return e.dst if e.kind is EventKind.TftpTransfer else e.src


def assign_ports(events: list) -> list:
    """Deterministic ephemeral source ports, one counter per initiating host."""
    counters = {}
    ports = []
    for e in events:
        if e.kind not in _NETWORK_KINDS:
            ports.append(None)
            continue
        ip = initiator(e).ip
        port = counters.get(ip, EPHEMERAL_FIRST)
        ports.append(port)
        counters[ip] = port + 1 if port < EPHEMERAL_LAST else EPHEMERAL_FIRST
    return ports


def connection(e: SimEvent, sport: int) -> tuple:
    """(proto, src ip, dst ip, src port, dst port) of the event's connection."""
    if e.kind is EventKind.TftpTransfer:
        return ("UDP", e.dst.ip, e.src.ip, sport, 69)
    return ("TCP", e.src.ip, e.dst.ip, sport, e.port.number)


def emit_firewall(events: list, host: HostId, base: datetime = DEFAULT_BASE_TIME,
                  ports: list = None) -> str:
    ports = assign_ports(events) if ports is None else ports
    lines = [FIREWALL_HEADER]
    for e, sport in zip(events, ports):
        if e.kind not in _NETWORK_KINDS:
            continue
        proto, sip, dip, sp, dp = connection(e, sport)
        if sip == host.ip:
            action = "OPEN"
        elif dip == host.ip:
            action = "OPEN-INBOUND"
        else:
            continue
        ts = wallclock(base, e.t_us).strftime(HOST_TIME)
        lines.append(f"{ts} {action} {proto} {sip} {dip} {sp} {dp}\n")
    return "".join(lines)


def emit_security(events: list, host: HostId, base: datetime = DEFAULT_BASE_TIME) -> str:
    lines = [SECURITY_HEADER]
    for e in events:
        if e.kind is EventKind.InfectionComplete and e.dst.ip == host.ip:
            ts = wallclock(base, e.t_us).strftime(HOST_TIME)
            lines.append(f"{ts},592,Process Created,{WORM_IMAGE}\n")
    return "".join(lines)


def emit_system(events: list, host: HostId, base: datetime = DEFAULT_BASE_TIME) -> str:
    lines = [SYSTEM_HEADER]
    for e in events:
        if e.kind in SYSTEM_MESSAGES and e.dst.ip == host.ip:
            code, message = SYSTEM_MESSAGES[e.kind]
            ts = wallclock(base, e.t_us).strftime(HOST_TIME)
            lines.append(f'{ts},{code},"{message}"\n')
    return "".join(lines)


def emit_application(events: list, host: HostId, base: datetime = DEFAULT_BASE_TIME) -> str:
    # no Blaster fingerprint is known for the application log
    return APPLICATION_HEADER


def detect_portsweeps(events: list, threshold: int = 5, window_s: float = 60.0) -> list:
    """Indices of the probes that trigger a Portsweep alert.

    Windows tumble per source: a window opens at the first probe not covered
    by the current one and lasts ``window_s``; it alerts once, on the probe
    that brings the distinct destination count to ``threshold``.
    """
    window_us = int(round(window_s * 1_000_000))
    state = {}  # src ip -> [window start, destinations, alerted]
    hits = []
    for i, e in enumerate(events):
        if e.kind is not EventKind.ScanProbe:
            continue
        st = state.get(e.src.ip)
        if st is None or e.t_us - st[0] >= window_us:
            st = state[e.src.ip] = [e.t_us, set(), False]
        st[1].add(e.dst.ip)
        if not st[2] and len(st[1]) >= threshold:
            st[2] = True
            hits.append(i)
    return hits


def ids_alerts(events: list, ports: list = None, threshold: int = 5, window_s: float = 60.0) -> list:
    """``(event index, signature)`` pairs in time order."""
    ports = assign_ports(events) if ports is None else ports
    alerts = [(i, PORTSWEEP_SIG) for i in detect_portsweeps(events, threshold, window_s)]
    alerts += [(i, TFTP_SIG) for i, e in enumerate(events) if e.kind is EventKind.TftpTransfer]
    alerts.sort()
    return alerts


def emit_ids(events: list, sensor: str, base: datetime = DEFAULT_BASE_TIME, ports: list = None,
             threshold: int = 5, window_s: float = 60.0) -> str:
    ports = assign_ports(events) if ports is None else ports
    lines = [IDS_HEADER.format(sensor=sensor)]
    for i, sig in ids_alerts(events, ports, threshold, window_s):
        e = events[i]
        proto, sip, dip, sp, dp = connection(e, ports[i])
        ts = wallclock(base, e.t_us).strftime(IDS_TIME)
        lines.append(f"{ts} [**] {sig} [**] {{{proto}}} {sip}:{sp} -> {dip}:{dp}\n")
    return "".join(lines)


def render_bundle(events: list, topology: NetworkTopology, base: datetime = DEFAULT_BASE_TIME,
                  threshold: int = 5, window_s: float = 60.0) -> dict:
    """Every log file of a run, keyed by path relative to the run directory."""
    ports = assign_ports(events)
    out = {}
    for h in topology.hosts:
        if not h.collect_logs:
            continue
        d = f"hosts/{h.name}"
        out[f"{d}/firewall.log"] = emit_firewall(events, h.id, base, ports)
        out[f"{d}/security.csv"] = emit_security(events, h.id, base)
        out[f"{d}/system.csv"] = emit_system(events, h.id, base)
        out[f"{d}/application.log"] = emit_application(events, h.id, base)
    for sensor in topology.ids_sensors:
        out[f"ids/{sensor}/alert.log"] = emit_ids(events, sensor, base, ports, threshold, window_s)
    return out


def events_csv(events: list) -> str:
    """Ground-truth trace, one row per simulated event."""
    lines = ["t,kind,src,dst,port,proto\n"]
    for e in events:
        lines.append(f"{e.t_us / 1e6:.6f},{e.kind.name},{e.src.name},{e.dst.name},"
                     f"{e.port.number},{e.port.protocol.value}\n")
    return "".join(lines)


def write_files(files: dict, out_dir) -> list:
    out_dir = Path(out_dir)
    written = []
    for rel, text in sorted(files.items()):
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        written.append(rel)
    return written
