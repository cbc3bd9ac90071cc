"""Parse the five log formats into one normalized, time-ordered stream."""

from __future__ import annotations

import csv
import enum
import functools
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from ipaddress import IPv4Address
from pathlib import Path
from typing import Optional

from .loggen import (
    HOST_TIME,
    PORTSWEEP_SIG,
    SECURITY_HEADER,
    SYSTEM_HEADER,
    TFTP_SIG,
)
from .model import HostId
from .simulator import DEFAULT_BASE_TIME

log = logging.getLogger(__name__)


class Sensor(enum.Enum):
    Firewall = "firewall"
    Security = "security"
    System = "system"
    Application = "application"
    IdsAlert = "ids"


class Kind(enum.IntEnum):
    FwOpen = 0
    FwOpenInbound = 1
    FwClose = 2
    ProcCreate = 3
    RpcTerminated = 4
    Reboot = 5
    AppEvent = 6
    IdsPortsweep = 7
    IdsTftpGet = 8


@dataclass(frozen=True)
class NormalizedEvent:
    t: datetime
    origin_host: str
    sensor: Sensor
    kind: Kind
    src_ip: Optional[IPv4Address] = None
    dst_ip: Optional[IPv4Address] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    proto: Optional[str] = None
    detail: str = ""
    # provenance, not part of the record's identity
    source: str = field(default="", compare=False)
    line: int = field(default=0, compare=False)

    def where(self) -> str:
        return f"{self.source}:{self.line}"


@dataclass
class ParseReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)  # (file, line number, reason)
    comments: int = 0

    def extend(self, other: "ParseReport") -> None:
        self.accepted += other.accepted
        self.rejected.extend(other.rejected)
        self.comments += other.comments


class Reject(ValueError):
    pass


_HOST_TIME_RE = re.compile(r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}")


def _host_time(text: str) -> datetime:
    # fromisoformat is far faster than strptime; the regex pins the exact shape
    if not _HOST_TIME_RE.fullmatch(text):
        raise Reject(f"bad timestamp {text!r}")
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise Reject(f"bad timestamp {text!r}") from None


@functools.lru_cache(maxsize=65536)
def _ip(text: str) -> IPv4Address:
    try:
        return IPv4Address(text)
    except ValueError:
        raise Reject(f"bad IPv4 address {text!r}") from None


def _port(text: str) -> int:
    n = int(text)
    if not 1 <= n <= 65535:
        raise Reject(f"port {n} out of range")
    return n


_FW_RE = re.compile(
    r"(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}) (OPEN|OPEN-INBOUND|CLOSE) (TCP|UDP) "
    r"(\S+) (\S+) (\d{1,5}) (\d{1,5})"
)
_FW_KIND = {"OPEN": Kind.FwOpen, "OPEN-INBOUND": Kind.FwOpenInbound, "CLOSE": Kind.FwClose}


def _firewall_line(line: str) -> dict:
    m = _FW_RE.fullmatch(line)
    if not m:
        raise Reject("not a firewall record")
    ts, action, proto, sip, dip, sp, dp = m.groups()
    return dict(t=_host_time(ts), sensor=Sensor.Firewall, kind=_FW_KIND[action], src_ip=_ip(sip),
                dst_ip=_ip(dip), src_port=_port(sp), dst_port=_port(dp), proto=proto)


def _csv_fields(line: str, n: int) -> list:
    try:
        row = next(csv.reader([line], strict=True))
    except (csv.Error, StopIteration):
        raise Reject("malformed CSV") from None
    if len(row) != n:
        raise Reject(f"expected {n} fields, got {len(row)}")
    return row


def _security_line(line: str) -> dict:
    ts, event_id, _category, detail = _csv_fields(line, 4)
    if event_id != "592":
        raise Reject(f"unsupported event id {event_id!r}")
    if not detail:
        raise Reject("process creation without image name")
    return dict(t=_host_time(ts), sensor=Sensor.Security, kind=Kind.ProcCreate, detail=detail)


_SYSTEM_KIND = {"RPC_TERMINATED": Kind.RpcTerminated, "SYSTEM_REBOOT": Kind.Reboot}


def _system_line(line: str) -> dict:
    ts, code, message = _csv_fields(line, 3)
    if code not in _SYSTEM_KIND:
        raise Reject(f"unknown event code {code!r}")
    return dict(t=_host_time(ts), sensor=Sensor.System, kind=_SYSTEM_KIND[code], detail=message)


_APP_RE = re.compile(r"(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}) (\S+) (\d+) (.*)")


def _application_line(line: str) -> dict:
    m = _APP_RE.fullmatch(line)
    if not m:
        raise Reject("not an application record")
    ts, source, event_id, message = m.groups()
    return dict(t=_host_time(ts), sensor=Sensor.Application, kind=Kind.AppEvent,
                detail=f"{source} {event_id} {message}")


_IDS_RE = re.compile(
    r"(\d{2})/(\d{2})-(\d{2}):(\d{2}):(\d{2})\.(\d{6}) \[\*\*\] (.+?) \[\*\*\] \{(TCP|UDP)\} "
    r"(\S+):(\d{1,5}) -> (\S+):(\d{1,5})"
)
_IDS_KIND = {PORTSWEEP_SIG: Kind.IdsPortsweep, TFTP_SIG: Kind.IdsTftpGet}


def _ids_parser(year: int):
    def parse(line: str) -> dict:
        m = _IDS_RE.fullmatch(line)
        if not m:
            raise Reject("not an alert record")
        *stamp, sig, proto, sip, sp, dip, dp = m.groups()
        if sig not in _IDS_KIND:
            raise Reject(f"unknown signature {sig!r}")
        try:
            t = datetime(year, *map(int, stamp))
        except ValueError:
            raise Reject(f"bad timestamp in {line[:21]!r}") from None
        return dict(t=t, sensor=Sensor.IdsAlert, kind=_IDS_KIND[sig], src_ip=_ip(sip), dst_ip=_ip(dip),
                    src_port=_port(sp), dst_port=_port(dp), proto=proto, detail=sig)
    return parse


def _parse_file(path, origin: str, line_parser, headers=(), offset_s: float = 0.0,
                label: Optional[str] = None) -> tuple:
    """Shared driver: comment/header skipping, rejection bookkeeping, ordering."""
    label = label or str(path)
    with open(path, "r", encoding="utf-8", errors="replace", newline="") as fh:
        text = fh.read()
    report = ParseReport()
    events = []
    shift = timedelta(seconds=offset_s)
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#") or line + "\n" in headers:
            report.comments += 1
            continue
        try:
            fields = line_parser(line)
        except (Reject, ValueError) as exc:
            report.rejected.append((label, lineno, str(exc)))
            continue
        if shift:
            fields["t"] += shift
        events.append(NormalizedEvent(origin_host=origin, source=label, line=lineno, **fields))
        report.accepted += 1
    events.sort(key=lambda e: e.t)
    return events, report


def parse_firewall(path, host: str, offset_s: float = 0.0, label: str = None) -> tuple:
    return _parse_file(path, host, _firewall_line, (), offset_s, label)


def parse_security(path, host: str, offset_s: float = 0.0, label: str = None) -> tuple:
    return _parse_file(path, host, _security_line, (SECURITY_HEADER,), offset_s, label)


def parse_system(path, host: str, offset_s: float = 0.0, label: str = None) -> tuple:
    return _parse_file(path, host, _system_line, (SYSTEM_HEADER,), offset_s, label)


def parse_application(path, host: str, offset_s: float = 0.0, label: str = None) -> tuple:
    return _parse_file(path, host, _application_line, (), offset_s, label)


def parse_ids(path, sensor: str, year: int = DEFAULT_BASE_TIME.year, offset_s: float = 0.0,
              label: str = None) -> tuple:
    return _parse_file(path, sensor, _ids_parser(year), (), offset_s, label)


HOST_PARSERS = {
    Sensor.Firewall: parse_firewall,
    Sensor.Security: parse_security,
    Sensor.System: parse_system,
    Sensor.Application: parse_application,
}
HOST_FILES = {
    "firewall.log": Sensor.Firewall,
    "security.csv": Sensor.Security,
    "system.csv": Sensor.System,
    "application.log": Sensor.Application,
}


def merge_streams(streams) -> list:
    """Merge per-file event lists into one stream ordered by (t, origin, kind)."""
    merged = [e for s in streams for e in s]
    merged.sort(key=lambda e: (e.t, e.origin_host, e.kind))
    return merged


# -- whole runs ---------------------------------------------------------------


@dataclass
class LoadedLogs:
    stream: list
    report: ParseReport
    inventory: Optional[list] = None  # HostId list when the run ships one
    log_hosts: list = field(default_factory=list)  # hosts that supplied logs
    files: int = 0


def read_inventory(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(HostId(IPv4Address(row["ip"]), row["name"]))
    return out


def _load(entries, inventory, year_hint, skew) -> LoadedLogs:
    """entries: (path, label, origin, Sensor)."""
    report = ParseReport()
    streams = []
    hosts = []
    ids_entries = []
    for path, label, origin, sensor in entries:
        if sensor is Sensor.IdsAlert:
            ids_entries.append((path, label, origin))
            continue
        evs, rep = HOST_PARSERS[sensor](path, origin, skew.get(origin, 0.0), label)
        streams.append(evs)
        report.extend(rep)
        if origin not in hosts:
            hosts.append(origin)
    year = year_hint
    if year is None:
        firsts = [s[0].t for s in streams if s]
        year = min(firsts).year if firsts else DEFAULT_BASE_TIME.year
    for path, label, origin in ids_entries:
        evs, rep = parse_ids(path, origin, year, skew.get(origin, 0.0), label)
        streams.append(evs)
        report.extend(rep)
    return LoadedLogs(merge_streams(streams), report, inventory, hosts, len(entries))


def load_run(run_dir, skew: dict = None) -> LoadedLogs:
    """Load every log of a run directory laid out by ``wormlab simulate``."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    entries = []
    for hdir in sorted((run_dir / "hosts").glob("*")):
        for fname, sensor in HOST_FILES.items():
            p = hdir / fname
            if p.is_file():
                entries.append((p, f"hosts/{hdir.name}/{fname}", hdir.name, sensor))
    for sdir in sorted((run_dir / "ids").glob("*")):
        p = sdir / "alert.log"
        if p.is_file():
            entries.append((p, f"ids/{sdir.name}/alert.log", sdir.name, Sensor.IdsAlert))
    inventory = None
    if (run_dir / "inventory.csv").is_file():
        inventory = read_inventory(run_dir / "inventory.csv")
    year = None
    manifest = run_dir / "manifest.json"
    if manifest.is_file():
        try:
            year = datetime.strptime(json.loads(manifest.read_text())["base_time"], HOST_TIME).year
        except (KeyError, ValueError):
            log.warning("manifest without usable base_time; inferring year from host logs")
    return _load(entries, inventory, year, skew or {})


def load_manifest(path, skew: dict = None) -> LoadedLogs:
    """Load externally supplied logs listed in a JSON file manifest.

    ``{"files": [{"path", "host", "sensor"}], "inventory": [{"name", "ip"}],
    "year": int, "skew": {host: seconds}}``; paths are relative to the
    manifest's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    root = path.parent
    entries = []
    for f in data.get("files", []):
        p = root / f["path"]
        entries.append((p, f["path"], f["host"], Sensor(f["sensor"])))
    inventory = None
    if "inventory" in data:
        inventory = [HostId(IPv4Address(h["ip"]), h["name"]) for h in data["inventory"]]
    merged_skew = dict(data.get("skew", {}))
    merged_skew.update(skew or {})
    return _load(entries, inventory, data.get("year"), merged_skew)
