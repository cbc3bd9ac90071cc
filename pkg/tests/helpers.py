"""Shared builders for the test suite."""

import random
from ipaddress import ip_network

from wormlab.config import bundled_config, load_config
from wormlab.ingest import load_run
from wormlab.loggen import render_bundle, write_files
from wormlab.model import Host, HostId, NetworkTopology, OsKind
from wormlab.simulator import SimConfig


def lab_config():
    return load_config(bundled_config("testbed"))


def random_topology(rng: random.Random, max_hosts: int = 8) -> NetworkTopology:
    n_subnets = rng.randint(1, 3)
    thirds = rng.sample(range(1, 250), n_subnets)
    subnets = tuple(ip_network(f"10.0.{x}.0/24") for x in thirds)
    n = rng.randint(2, max_hosts)
    used = set()
    hosts = []
    for i in range(n):
        while True:
            ip = subnets[rng.randrange(n_subnets)].network_address + rng.randint(1, 254)
            if ip not in used:
                used.add(ip)
                break
        os_kind = rng.choices([OsKind.WindowsXP, OsKind.Windows2000, OsKind.Other], [6, 3, 1])[0]
        hosts.append(Host(HostId(ip, f"h{i}"), os_kind, initially_infected=(i == 0)))
    return NetworkTopology(tuple(hosts), subnets, frozenset(), ("ids0",))


def random_case(seed: int, duration_s: float = 600.0):
    rng = random.Random(seed)
    topo = random_topology(rng)
    cfg = SimConfig(seed=seed, duration_s=duration_s, local_subnet_bias=rng.choice([0.4, 0.7, 1.0]))
    return topo, cfg


def inventory_csv(topology) -> str:
    return "name,ip\n" + "".join(f"{h.name},{h.ip}\n" for h in topology.hosts)


def write_run(result, out_dir):
    files = render_bundle(result.events, result.topology, result.config.base_time)
    files["inventory.csv"] = inventory_csv(result.topology)
    write_files(files, out_dir)
    return files


def reload(result, out_dir):
    write_run(result, out_dir)
    return load_run(out_dir)
