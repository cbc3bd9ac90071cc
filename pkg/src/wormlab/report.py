"""Human-readable findings and delimited edge tables for an analysis."""

from __future__ import annotations

from .correlator import Analysis, PatternMatch
from .ingest import ParseReport
from .model import TIME_FORMAT


def edges_csv(analysis: Analysis) -> str:
    lines = ["attacker,attacker_ip,victim,victim_ip,status,scan,exploit,impact_effect,network_only\n"]
    for e in analysis.graph.edges:
        times = [t.strftime(TIME_FORMAT) for _, t in e.steps] + [""] * (3 - len(e.steps))
        lines.append(",".join([e.attacker.name, str(e.attacker.ip), e.victim.name, str(e.victim.ip),
                               e.status.value, *times, str(e.network_only).lower()]) + "\n")
    return "".join(lines)


def _match_block(m: PatternMatch) -> list:
    if len(m.counterparts) == 2:
        head = f"{m.pattern.value} {m.host.name}: victim of {m.counterparts[0].name}, attacker of {m.counterparts[1].name}"
    else:
        rel = "->" if m.pattern.value == "AttackerPattern" else "<-"
        head = f"{m.pattern.value} {m.host.name} {rel} {m.counterpart.name}"
    out = [head]
    for e in m.evidence:
        what = e.kind.name
        if e.src_ip is not None:
            what += f" {e.proto} {e.src_ip}:{e.src_port} -> {e.dst_ip}:{e.dst_port}"
        elif e.detail:
            what += f" {e.detail}"
        out.append(f"    {e.t.strftime(TIME_FORMAT)}  {what}  [{e.where()}]")
    return out


def findings_text(analysis: Analysis, parse: ParseReport = None) -> str:
    r = analysis.rules
    g = analysis.graph
    out = [
        "wormlab findings",
        "================",
        f"step window: {r.step_window_s:g} s",
        f"network confirmation required: {'yes' if r.require_network_confirmation else 'no'}",
        f"worm images: {', '.join(sorted(r.image_names))}",
    ]
    if parse is not None:
        out.append(f"records accepted: {parse.accepted}, rejected: {len(parse.rejected)}")
    out += ["", "Host roles", "----------"]
    for h in sorted(g.roles, key=lambda h: h.ip):
        out.append(f"  {h.name:<12} {str(h.ip):<16} {g.roles[h].value}")
    out += ["", "Attack edges", "------------"]
    if not g.edges:
        out.append("  (none)")
    for e in g.edges:
        marks = "+".join(str(p.number) for p in analysis.rules.ports[: len(e.steps)])
        note = "  [network-only evidence]" if e.network_only else ""
        out.append(f"  {e.attacker.name} -> {e.victim.name}: {e.status.value} ({marks}){note}")
    for title, matches in (("Attacker patterns", analysis.attacker),
                           ("Victim patterns", analysis.victim),
                           ("Multi-step patterns", analysis.multistep)):
        out += ["", title, "-" * len(title)]
        if not matches:
            out.append("  (none)")
        for m in matches:
            out += ["  " + line for line in _match_block(m)]
    if analysis.orphans:
        out += ["", "Step evidence without a scan (not reported as edges)", "-" * 52]
        out += [f"  {a.name} -> {v.name}" for a, v in analysis.orphans]
    return "\n".join(out) + "\n"
