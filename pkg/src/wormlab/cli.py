"""Command-line front end: simulate, analyze, diff, formats.

Exit codes: 0 success, 1 invalid config or semantic difference, 2 I/O or
malformed-input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime
from importlib import resources
from pathlib import Path

from . import __version__
from .config import ConfigError, bundled_config, load_config
from .correlator import PatternRules, analyze
from .ingest import load_manifest, load_run
from .loggen import events_csv, render_bundle, write_files
from .model import TIME_FORMAT, TopologyError, diff_graphs
from .report import edges_csv, findings_text
from .simulator import InvalidConfig, simulate

log = logging.getLogger("wormlab")

EXIT_OK, EXIT_SEMANTIC, EXIT_IO = 0, 1, 2


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve_config(name: str) -> Path:
    # bare names select a configuration shipped with the package
    p = Path(name)
    if not p.exists() and p.suffix == "" and os.sep not in name:
        candidate = bundled_config(name)
        if candidate.exists():
            return candidate
    return p


def cmd_simulate(config: str, out: str, seed: int = None, duration: float = None,
                 wallclock: str = "fixed") -> int:
    cfg_path = _resolve_config(config)
    try:
        topology, cfg = load_config(cfg_path)
    except OSError as exc:
        print(f"error: cannot read config {cfg_path}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, TopologyError) as exc:
        problems = getattr(exc, "violations", None) or getattr(exc, "problems", [])
        print(f"error: invalid config {cfg_path}:", file=sys.stderr)
        for p in problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_SEMANTIC
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if duration is not None:
        cfg = dataclasses.replace(cfg, duration_s=duration)
    if wallclock == "now":
        cfg = dataclasses.replace(cfg, base_time=datetime.now().replace(microsecond=0))
    elif wallclock != "fixed":
        try:
            cfg = dataclasses.replace(cfg, base_time=datetime.strptime(wallclock, TIME_FORMAT))
        except ValueError:
            print(f"error: --wallclock expects 'fixed', 'now' or '{TIME_FORMAT}'", file=sys.stderr)
            return EXIT_SEMANTIC
    try:
        result = simulate(topology, cfg)
    except (InvalidConfig, TopologyError) as exc:
        print(f"error: invalid config {cfg_path}:", file=sys.stderr)
        for p in getattr(exc, "violations", None) or str(exc).split("; "):
            print(f"  {p}", file=sys.stderr)
        return EXIT_SEMANTIC
    log.info("simulated %d events, %d edges", len(result.events), len(result.truth.edges))

    files = render_bundle(result.events, topology, cfg.base_time)
    files["truth.json"] = result.truth.to_json()
    files["truth.dot"] = result.truth.to_dot()
    files["events.csv"] = events_csv(result.events)
    files["inventory.csv"] = "name,ip\n" + "".join(f"{h.name},{h.ip}\n" for h in topology.hosts)
    out_dir = Path(out)
    try:
        written = write_files(files, out_dir)
        manifest = {
            "tool": "wormlab",
            "version": __version__,
            "config": str(config),
            "config_sha256": _sha256(cfg_path),
            "output_dir": str(out),
            "seed": cfg.seed,
            "duration_s": cfg.duration_s,
            "base_time": cfg.base_time.strftime(TIME_FORMAT),
            "files": {rel: _sha256(out_dir / rel) for rel in written},
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: cannot write run to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(written) + 1} files to {out_dir}")
    return EXIT_OK


def cmd_analyze(source: str, out: str = None, window: float = 300.0, require_ids: bool = False,
                figures: bool = True) -> int:
    src = Path(source)
    try:
        if src.is_file():
            logs = load_manifest(src)
            default_out = src.parent / "analysis"
        else:
            logs = load_run(src)
            default_out = src / "analysis"
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read logs from {src}: {exc}", file=sys.stderr)
        return EXIT_IO
    for label, lineno, reason in logs.report.rejected[:20]:
        print(f"rejected {label}:{lineno}: {reason}", file=sys.stderr)
    if len(logs.report.rejected) > 20:
        print(f"... {len(logs.report.rejected) - 20} more rejected lines", file=sys.stderr)

    try:
        rules = PatternRules(step_window_s=window, require_network_confirmation=require_ids)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    result = analyze(logs.stream, rules, logs.inventory)
    out_dir = Path(out) if out else default_out
    try:
        write_files({
            "scenario.json": result.graph.to_json(),
            "scenario.dot": result.graph.to_dot(),
            "findings.txt": findings_text(result, logs.report),
            "edges.csv": edges_csv(result),
        }, out_dir)
        if figures:
            from .plotting import plot_scenario, plot_timeline
            plot_scenario(result.graph, out_dir / "scenario.png")
            plot_timeline(result.graph, out_dir / "timeline.png")
    except OSError as exc:
        print(f"error: cannot write analysis to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{len(result.graph.edges)} edges, {len(result.multistep)} multi-step patterns -> {out_dir}")
    return EXIT_OK


def cmd_diff(a: str, b: str) -> int:
    graphs = []
    for p in (a, b):
        try:
            data = json.loads(Path(p).read_text(encoding="utf-8"))
            if not isinstance(data, dict) or "hosts" not in data or "edges" not in data:
                raise ValueError("not a scenario graph")
        except (OSError, ValueError) as exc:
            print(f"error: {p}: {exc}", file=sys.stderr)
            return EXIT_IO
        graphs.append(data)
    try:
        lines = diff_graphs(*graphs)
    except (KeyError, TypeError) as exc:
        print(f"error: malformed scenario graph: {exc}", file=sys.stderr)
        return EXIT_IO
    for line in lines:
        print(line)
    return EXIT_SEMANTIC if lines else EXIT_OK


def format_reference() -> str:
    return (resources.files("wormlab") / "data" / "formats.md").read_text(encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wormlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"wormlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate propagation and write a run directory")
    s.add_argument("--config", required=True,
                   help="TOML config file, or the name of a bundled one (e.g. testbed)")
    s.add_argument("--out", required=True, help="run directory to write")
    s.add_argument("--seed", type=int, help="override the configured seed")
    s.add_argument("--duration", type=float, help="override duration_s")
    s.add_argument("--wallclock", default="fixed",
                   help="log base time: 'fixed' (configured), 'now', or 'YYYY-MM-DD HH:MM:SS'")

    a = sub.add_parser("analyze", help="reconstruct the attack scenario from logs")
    a.add_argument("source", help="run directory, or a JSON manifest of foreign log files")
    a.add_argument("--out", help="output directory (default: <source>/analysis)")
    a.add_argument("--window", type=float, default=300.0, help="max seconds between chained steps")
    a.add_argument("--require-ids", action="store_true",
                   help="scans need a Portsweep alert and payload pulls a TFTP Get alert")
    a.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    d = sub.add_parser("diff", help="compare two scenario graph JSON files")
    d.add_argument("graph_a")
    d.add_argument("graph_b")

    sub.add_parser("formats", help="print the log and config format reference")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("WORMLAB_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed, args.duration, args.wallclock)
    if args.command == "analyze":
        return cmd_analyze(args.source, args.out, args.window, args.require_ids, not args.no_figures)
    if args.command == "diff":
        return cmd_diff(args.graph_a, args.graph_b)
    sys.stdout.write(format_reference())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
