"""TOML configuration: network topology plus simulation settings.

See ``wormlab formats`` for the schema.
"""

from __future__ import annotations

import sys
from datetime import datetime
from importlib import resources
from ipaddress import IPv4Address, ip_network
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (
    TIME_FORMAT,
    WORM_PORTS,
    EdgeStatus,
    Host,
    HostId,
    NetworkTopology,
    OsKind,
    PortSpec,
    TopologyError,
    Violation,
)
from .simulator import SimConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


def _host(entry: dict) -> Host:
    ports = entry.get("vulnerable_ports")
    return Host(
        id=HostId(IPv4Address(entry["ip"]), entry["name"]),
        os=OsKind(entry.get("os", "WindowsXP")),
        vulnerable_ports=frozenset(PortSpec.parse(p) for p in ports) if ports is not None else WORM_PORTS,
        initially_infected=bool(entry.get("origin", False)),
        collect_logs=bool(entry.get("collect_logs", True)),
    )


def topology_from_dict(data: dict) -> NetworkTopology:
    net = data.get("network", {})
    try:
        hosts = tuple(_host(h) for h in net.get("hosts", []))
        subnets = tuple(ip_network(s) for s in net.get("subnets", []))
    except (KeyError, ValueError) as exc:
        raise TopologyError([Violation("Malformed", None, f"bad host or subnet entry: {exc}")]) from exc
    return NetworkTopology(
        hosts=hosts,
        subnets=subnets,
        trust=frozenset(tuple(p) for p in net.get("trust", [])),
        ids_sensors=tuple(net.get("ids_sensors", [])),
    )


def sim_config_from_dict(data: dict) -> SimConfig:
    sim = dict(data.get("simulation", {}))
    cfg = SimConfig()
    try:
        for key in ("seed",):
            if key in sim:
                setattr(cfg, key, int(sim[key]))
        for key in ("duration_s", "scan_interval_s", "local_subnet_bias", "p_transfer_success",
                    "exploit_delay_s", "transfer_delay_s", "impact_delay_s"):
            if key in sim:
                setattr(cfg, key, float(sim[key]))
        if "p_infect" in sim:
            cfg.p_infect = dict(cfg.p_infect)
            cfg.p_infect.update({OsKind(k): float(v) for k, v in sim["p_infect"].items()})
        if "base_time" in sim:
            cfg.base_time = datetime.strptime(str(sim["base_time"]), TIME_FORMAT)
        if sim.get("forced_default"):
            cfg.forced_default = EdgeStatus(sim["forced_default"])
        cfg.forced_outcomes = {
            (f["attacker"], f["victim"]): EdgeStatus(f["status"]) for f in sim.get("forced", [])
        }
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError([f"bad [simulation] entry: {exc}"]) from exc
    return cfg


def load_config(path) -> tuple:
    """Read ``(NetworkTopology, SimConfig)`` from a TOML file.

    Raises OSError when the file cannot be read and ConfigError or
    TopologyError when its contents are invalid.
    """
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return topology_from_dict(data), sim_config_from_dict(data)


def bundled_config(name: str = "testbed") -> Path:
    """Path of a configuration shipped with the package."""
    return Path(str(resources.files("wormlab") / "data" / f"{name}.toml"))
