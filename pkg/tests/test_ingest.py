import json
import random
from datetime import datetime, timedelta
from ipaddress import IPv4Address

import pytest
from hypothesis import given, settings, strategies as st

from helpers import lab_config, random_case, write_run
from oracle import as_tuples, projection
from wormlab.ingest import (
    Kind,
    NormalizedEvent,
    Sensor,
    load_manifest,
    load_run,
    merge_streams,
    parse_application,
    parse_firewall,
    parse_ids,
    parse_security,
    parse_system,
)
from wormlab.loggen import APPLICATION_HEADER, FIREWALL_HEADER, SECURITY_HEADER, SYSTEM_HEADER
from wormlab.simulator import simulate

T0 = datetime(2009, 7, 23, 10, 0, 0)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_firewall_record(tmp_path):
    p = write(tmp_path, "fw.log", FIREWALL_HEADER +
              "2009-07-23 10:00:10 OPEN TCP 192.168.2.10 192.168.4.20 1045 135\n")
    (e,), rep = parse_firewall(p, "Tarmizi")
    assert (e.t, e.kind, e.src_ip, e.dst_ip, e.src_port, e.dst_port, e.proto) == (
        T0 + timedelta(seconds=10), Kind.FwOpen, IPv4Address("192.168.2.10"),
        IPv4Address("192.168.4.20"), 1045, 135, "TCP")
    assert e.origin_host == "Tarmizi" and e.sensor is Sensor.Firewall and e.line == 5
    assert rep.accepted == 1 and rep.rejected == [] and rep.comments == 4


def test_security_record(tmp_path):
    p = write(tmp_path, "sec.csv", SECURITY_HEADER +
              "2009-07-23 10:00:20,592,Process Created,C:\\WINDOWS\\system32\\msblast.exe\n")
    (e,), _ = parse_security(p, "Sahib")
    assert e.kind is Kind.ProcCreate and e.detail == "C:\\WINDOWS\\system32\\msblast.exe"


def test_system_records(tmp_path):
    p = write(tmp_path, "sys.csv", SYSTEM_HEADER +
              '2009-07-23 10:00:20,RPC_TERMINATED,"The Remote Procedure Call (RPC) service '
              'terminated unexpectedly"\n2009-07-23 10:00:20,SYSTEM_REBOOT,"Windows must now restart"\n')
    evs, rep = parse_system(p, "Mohd")
    assert [e.kind for e in evs] == [Kind.RpcTerminated, Kind.Reboot]
    assert [e.line for e in evs] == [2, 3]


def test_garbage_line_rejected(tmp_path):
    p = write(tmp_path, "fw.log", FIREWALL_HEADER + "!!!\n")
    evs, rep = parse_firewall(p, "x", label="fw.log")
    assert evs == [] and rep.accepted == 0
    assert len(rep.rejected) == 1 and rep.rejected[0][:2] == ("fw.log", 5)


def test_wholly_malformed_file(tmp_path):
    p = write(tmp_path, "sec.csv", "a,b\n\x00\x01\n,,,\n2009-13-40 99:99:99,592,x,y\n")
    evs, rep = parse_security(p, "x")
    assert evs == [] and len(rep.rejected) == 4


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        parse_firewall(tmp_path / "nope.log", "x")


def test_application_log(tmp_path):
    evs, rep = parse_application(write(tmp_path, "a.log", APPLICATION_HEADER), "x")
    assert evs == [] and rep.rejected == []
    p = write(tmp_path, "b.log", APPLICATION_HEADER + "2009-07-23 10:00:01 Userenv 1030 policy failed\n")
    (e,), _ = parse_application(p, "x")
    assert e.kind is Kind.AppEvent and e.detail == "Userenv 1030 policy failed"


def test_ids_record_and_year(tmp_path):
    p = write(tmp_path, "alert.log", "# sensor: Sepat\n"
              "07/23-10:00:15.000123 [**] TFTP Get [**] {UDP} 192.168.4.20:1069 -> 192.168.2.10:69\n")
    (e,), _ = parse_ids(p, "Sepat", year=2003)
    assert e.t == datetime(2003, 7, 23, 10, 0, 15, 123)
    assert e.kind is Kind.IdsTftpGet and e.dst_port == 69 and e.proto == "UDP"


def test_ids_bad_date_is_rejected(tmp_path):
    p = write(tmp_path, "alert.log",
              "02/30-10:00:15.000000 [**] TFTP Get [**] {UDP} 1.2.3.4:1 -> 1.2.3.5:69\n")
    evs, rep = parse_ids(p, "s")
    assert evs == [] and len(rep.rejected) == 1


def test_skew_shifts_times(tmp_path):
    p = write(tmp_path, "fw.log", "2009-07-23 10:00:10 OPEN TCP 10.0.0.1 10.0.0.2 1025 135\n")
    (e,), _ = parse_firewall(p, "x", offset_s=-2.5)
    assert e.t == T0 + timedelta(seconds=7.5)


def test_stable_order_within_file(tmp_path):
    p = write(tmp_path, "fw.log",
              "2009-07-23 10:00:11 OPEN TCP 10.0.0.1 10.0.0.3 1026 135\n"
              "2009-07-23 10:00:10 OPEN TCP 10.0.0.1 10.0.0.2 1025 135\n"
              "2009-07-23 10:00:11 OPEN TCP 10.0.0.1 10.0.0.4 1027 135\n")
    evs, _ = parse_firewall(p, "x")
    assert [e.line for e in evs] == [2, 1, 3]


# -- merging -------------------------------------------------------------------

def ne(sec, host, kind=Kind.FwOpen):
    return NormalizedEvent(T0 + timedelta(seconds=sec), host, Sensor.Firewall, kind)


def test_merge_disjoint():
    a = [ne(1, "a"), ne(2, "a")]
    b = [ne(3, "b"), ne(4, "b")]
    assert merge_streams([b, a]) == a + b


def test_merge_ties_by_origin_name():
    assert [e.origin_host for e in merge_streams([[ne(5, "Yusof")], [ne(5, "Mohd")]])] == ["Mohd", "Yusof"]


event_st = st.builds(ne, st.integers(0, 20), st.sampled_from(["a", "b", "c"]), st.sampled_from(list(Kind)))


@given(st.lists(st.lists(event_st, max_size=10), max_size=5))
def test_merge_is_sorted_permutation(streams):
    streams = [sorted(s, key=lambda e: e.t) for s in streams]
    merged = merge_streams(streams)
    assert sorted(map(repr, merged)) == sorted(repr(e) for s in streams for e in s)
    keys = [(e.t, e.origin_host, e.kind) for e in merged]
    assert keys == sorted(keys)


# -- whole runs ----------------------------------------------------------------

def test_golden_round_trip(tmp_path):
    topo, cfg = lab_config()
    r = simulate(topo, cfg)
    files = write_run(r, tmp_path)
    logs = load_run(tmp_path)
    assert logs.report.rejected == []
    assert as_tuples(logs.stream) == projection(r.events, topo, cfg.base_time)
    records = sum(1 for name, text in files.items() if name != "inventory.csv"
                  for ln in text.splitlines() if ln and not ln.startswith("#")
                  and ln + "\n" not in (SECURITY_HEADER, SYSTEM_HEADER))
    assert len(logs.stream) == records


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_random_round_trip(tmp_path_factory, seed):
    topo, cfg = random_case(seed, duration_s=300)
    r = simulate(topo, cfg)
    out = tmp_path_factory.mktemp("run")
    write_run(r, out)
    logs = load_run(out)
    assert logs.report.rejected == []
    assert as_tuples(logs.stream) == projection(r.events, topo, cfg.base_time)


def test_fuzzed_files_account_for_every_line(tmp_path):
    topo, cfg = lab_config()
    files = write_run(simulate(topo, cfg), tmp_path)
    rng = random.Random(11)
    for rel in files:
        if rel == "inventory.csv":
            continue
        data = bytearray((tmp_path / rel).read_bytes())
        for _ in range(max(1, len(data) // 50)):
            data[rng.randrange(len(data))] = rng.randrange(256)
        (tmp_path / rel).write_bytes(bytes(data))
    logs = load_run(tmp_path)
    lines = 0
    for rel in files:
        if rel == "inventory.csv":
            continue
        text = (tmp_path / rel).read_bytes().decode("utf-8", errors="replace")
        lines += sum(1 for ln in text.split("\n") if ln.rstrip("\r").strip())
    rep = logs.report
    assert rep.accepted + len(rep.rejected) + rep.comments == lines
    assert rep.accepted == len(logs.stream)


def test_manifest_loading(tmp_path):
    (tmp_path / "t").mkdir()
    write(tmp_path, "t/pfirewall.log",
          "2004-07-23 10:00:10 OPEN TCP 192.168.2.10 192.168.4.20 1045 135\n")
    write(tmp_path, "alert",
          "07/23-10:00:15.000000 [**] TFTP Get [**] {UDP} 192.168.4.20:1069 -> 192.168.2.10:69\n")
    manifest = {
        "files": [{"path": "t/pfirewall.log", "host": "Tarmizi", "sensor": "firewall"},
                  {"path": "alert", "host": "Arowana", "sensor": "ids"}],
        "inventory": [{"name": "Tarmizi", "ip": "192.168.2.10"}],
        "year": 2004,
        "skew": {"Tarmizi": 1},
    }
    m = write(tmp_path, "logs.json", json.dumps(manifest))
    logs = load_manifest(m)
    assert [e.kind for e in logs.stream] == [Kind.FwOpen, Kind.IdsTftpGet]
    assert logs.stream[0].t == datetime(2004, 7, 23, 10, 0, 11)
    assert logs.stream[1].t == datetime(2004, 7, 23, 10, 0, 15)
    assert [h.name for h in logs.inventory] == ["Tarmizi"]


def test_run_without_manifest_infers_year(tmp_path):
    topo, cfg = lab_config()
    write_run(simulate(topo, cfg), tmp_path)
    ids = [e for e in load_run(tmp_path).stream if e.sensor is Sensor.IdsAlert]
    assert ids and all(e.t.year == 2009 for e in ids)
