"""Figures for the analysis report: scenario graph and step timeline."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .model import AttackStep, EdgeStatus, HostRole, ScenarioGraph  # noqa: E402

STATUS_STYLE = {
    EdgeStatus.FullyInfected: dict(color="tab:red", linestyle="-", linewidth=2.0),
    EdgeStatus.BackdoorOnly: dict(color="tab:orange", linestyle="--", linewidth=1.5),
    EdgeStatus.ScanOnly: dict(color="0.7", linestyle=":", linewidth=0.8),
}
ROLE_COLOR = {
    HostRole.Attacker: "tab:red",
    HostRole.AttackerVictim: "tab:purple",
    HostRole.Victim: "tab:orange",
    HostRole.Unaffected: "0.85",
}
STEP_MARKER = {AttackStep.Scan: "o", AttackStep.Exploit: "s", AttackStep.ImpactEffect: "*"}


def _generations(graph: ScenarioGraph) -> dict:
    """Column per host: 0 for attackers, otherwise one past its infector."""
    gen = {h: 0 for h, r in graph.roles.items() if r is HostRole.Attacker}
    # infection lineage first, so backdoor-only hits do not pull hosts forward
    for status in (EdgeStatus.FullyInfected, EdgeStatus.BackdoorOnly):
        hits = [e for e in graph.edges if e.status is status]
        changed = True
        while changed:
            changed = False
            for e in hits:
                if e.attacker in gen and e.victim not in gen:
                    gen[e.victim] = gen[e.attacker] + 1
                    changed = True
    last = max(gen.values(), default=0) + 1
    for h in graph.roles:
        gen.setdefault(h, last)
    return gen


def layout(graph: ScenarioGraph) -> dict:
    gen = _generations(graph)
    columns = {}
    for h in sorted(graph.roles, key=lambda h: h.ip):
        columns.setdefault(gen[h], []).append(h)
    pos = {}
    for x, hosts in columns.items():
        for i, h in enumerate(hosts):
            pos[h] = (x, -(i - (len(hosts) - 1) / 2))
    return pos


def plot_scenario(graph: ScenarioGraph, path, show_scans: bool = False) -> None:
    pos = layout(graph)
    fig, ax = plt.subplots(figsize=(8, 5))
    for e in graph.edges:
        if e.status is EdgeStatus.ScanOnly and not show_scans:
            continue
        (x0, y0), (x1, y1) = pos[e.attacker], pos[e.victim]
        style = STATUS_STYLE[e.status]
        # bend partial edges so they do not hide infection edges along the same line
        rad = 0.0 if e.status is EdgeStatus.FullyInfected else 0.25
        ax.annotate("", xy=(x1, y1), xytext=(x0, y0),
                    arrowprops=dict(arrowstyle="-|>", shrinkA=14, shrinkB=14,
                                    connectionstyle=f"arc3,rad={rad}", **style))
        marks = "+".join(("135", "4444", "69")[: len(e.steps)])
        mx, my = (x0 + x1) / 2 + rad * (y1 - y0) / 2, (y0 + y1) / 2 - rad * (x1 - x0) / 2
        ax.text(mx, my, marks, fontsize=7, ha="center", va="bottom", color=style["color"])
    for h, (x, y) in pos.items():
        role = graph.roles[h]
        ax.scatter([x], [y], s=600, color=ROLE_COLOR[role], edgecolor="k", zorder=3)
        ax.text(x, y - 0.32, f"{h.name}\n{h.ip}", fontsize=7, ha="center", va="top")
    handles = [plt.Line2D([], [], label=s.value, **STATUS_STYLE[s]) for s in STATUS_STYLE
               if show_scans or s is not EdgeStatus.ScanOnly]
    handles += [plt.Line2D([], [], marker="o", linestyle="", markersize=9, color=c, label=r.value)
                for r, c in ROLE_COLOR.items()]
    ax.legend(handles=handles, fontsize=7, loc="upper right", frameon=False)
    ax.set_axis_off()
    ax.margins(0.15)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_timeline(graph: ScenarioGraph, path) -> None:
    edges = [e for e in graph.edges if e.status is not EdgeStatus.ScanOnly]
    fig, ax = plt.subplots(figsize=(8, 0.4 * max(len(edges), 3) + 1.2))
    t0 = min((t for e in edges for _, t in e.steps), default=None)
    for row, e in enumerate(edges):
        offs = [(t - t0).total_seconds() for _, t in e.steps]
        style = STATUS_STYLE[e.status]
        ax.plot(offs, [row] * len(offs), color=style["color"], linestyle=style["linestyle"])
        for (step, _), x in zip(e.steps, offs):
            ax.plot([x], [row], marker=STEP_MARKER[step], color=style["color"], linestyle="")
    ax.set_yticks(range(len(edges)))
    ax.set_yticklabels([f"{e.attacker.name} -> {e.victim.name}" for e in edges], fontsize=7)
    ax.set_xlabel("seconds since first attack step")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
