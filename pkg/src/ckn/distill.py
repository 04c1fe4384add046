"""Propagate physical-layer run data up the logical layer.

Instance -> SweepSummary -> SweepGroupStatus -> CampaignStatus. Each level
reads only the level directly below it, and every status node is replaced in
place so repeated distillation is idempotent.
"""

from __future__ import annotations

import math
import time

from ckn.errors import NotFound, WrongKind
from ckn.graph import Direction, EdgeRelation, GraphEdge, GraphNode, GraphStore, NodeKind

SUMMARY_SUFFIX = "#summary"
STATUS_SUFFIX = "#status"
VOLATILE_PROPERTIES = ("last_updated",)


def _require(store: GraphStore, node_id: str, kind: NodeKind) -> GraphNode:
    node = store.get_node(node_id)
    if node.kind is not kind:
        raise WrongKind(f"{node_id} is a {node.kind.value}, expected {kind.value}")
    return node


def _upsert(store: GraphStore, node_id: str, kind: NodeKind, props: dict[str, str], edge: GraphEdge) -> str:
    if store.has_node(node_id):
        if store.get_node(node_id).properties != props:
            store.update_node(node_id, props, replace=True)
    else:
        store.add_node(GraphNode(node_id, kind, props))
    store.add_edge(edge)
    return node_id


def _incoming(store: GraphStore, node_id: str, relation: EdgeRelation) -> list[str]:
    return store.neighbors(node_id, relation, Direction.INCOMING)


def _float(props: dict[str, str], key: str) -> float | None:
    raw = props.get(key)
    if raw is None:
        return None
    try:
        value = float(raw)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _stats_props(runtimes: list[float], count: int, total: float) -> dict[str, str]:
    if not runtimes:
        return {}
    return {
        "runtime_count": str(count),
        "runtime_min": repr(min(runtimes)),
        "runtime_max": repr(max(runtimes)),
        "runtime_total": repr(total),
        "runtime_mean": repr(total / count),
    }


def distill_sweep(store: GraphStore, sweep: str) -> str:
    with store.write():
        node = _require(store, sweep, NodeKind.SWEEP)
        instances = [store.get_node(i) for i in _incoming(store, sweep, EdgeRelation.INSTANTIATES)]
        runtimes = [r for r in (_float(i.properties, "runtime") for i in instances) if r is not None]
        success = sum(1 for i in instances if i.properties.get("exit_code") == "0")
        props = {
            "name": f"summary of {node.properties.get('name', sweep)}",
            "sweep": sweep,
            "instance_count": str(len(instances)),
            "success_count": str(success),
            **{k: v for k, v in node.properties.items() if k.startswith("param.")},
            **_stats_props(runtimes, len(runtimes), math.fsum(runtimes)),
        }
        summary_id = sweep + SUMMARY_SUFFIX
        return _upsert(
            store, summary_id, NodeKind.SWEEP_SUMMARY, props,
            GraphEdge(summary_id, sweep, EdgeRelation.SUMMARIZES),
        )


def distill_group(store: GraphStore, group: str) -> str:
    """Rebuild every sweep summary of ``group``, then its status from those summaries."""
    with store.write():
        node = _require(store, group, NodeKind.SWEEP_GROUP)
        sweeps = _incoming(store, group, EdgeRelation.PART_OF)
        summaries = [store.get_node(distill_sweep(store, s)).properties for s in sweeps]

        swept = [s for s in summaries if int(s["instance_count"]) > 0]
        coverage: dict[str, list[float]] = {}
        for s in swept:
            for key in s:
                if key.startswith("param."):
                    value = _float(s, key)
                    if value is not None:
                        coverage.setdefault(key[6:], []).append(value)

        timed = [s for s in swept if "runtime_total" in s]
        count = sum(int(s["runtime_count"]) for s in timed)
        props = {
            "name": f"status of {node.properties.get('name', group)}",
            "group": group,
            "sweep_count": str(len(sweeps)),
            "swept_sweep_count": str(len(swept)),
            "instance_count": str(sum(int(s["instance_count"]) for s in summaries)),
            "success_count": str(sum(int(s["success_count"]) for s in summaries)),
        }
        for param in sorted(coverage):
            props[f"cov.{param}.min"] = repr(min(coverage[param]))
            props[f"cov.{param}.max"] = repr(max(coverage[param]))
        if timed:
            props["runtime_min"] = repr(min(float(s["runtime_min"]) for s in timed))
            props["runtime_max"] = repr(max(float(s["runtime_max"]) for s in timed))
            total = math.fsum(float(s["runtime_total"]) for s in timed)
            props["runtime_count"] = str(count)
            props["runtime_total"] = repr(total)
            props["runtime_mean"] = repr(total / count)
        status_id = group + STATUS_SUFFIX
        return _upsert(
            store, status_id, NodeKind.SWEEP_GROUP_STATUS, props,
            GraphEdge(group, status_id, EdgeRelation.HAS_STATUS),
        )


def distill_campaign(store: GraphStore, campaign: str, *, cascade: bool = True, now: int | None = None) -> str:
    """Build the CampaignStatus node from group statuses.

    With ``cascade`` (the default) every group is re-distilled first;
    otherwise existing group statuses are reused and only missing ones built.
    """
    with store.write():
        node = _require(store, campaign, NodeKind.CAMPAIGN)
        groups = _incoming(store, campaign, EdgeRelation.PART_OF)
        status_ids = []
        for g in groups:
            existing = g + STATUS_SUFFIX
            if cascade or not store.has_node(existing):
                status_ids.append(distill_group(store, g))
            else:
                status_ids.append(existing)
        statuses = [store.get_node(s).properties for s in status_ids]
        total = sum(int(s["sweep_count"]) for s in statuses)
        swept = sum(int(s["swept_sweep_count"]) for s in statuses)
        props = {
            "name": f"status of {node.properties.get('name', campaign)}",
            "campaign": campaign,
            "group_statuses": ",".join(sorted(status_ids)),
            "total_sweeps": str(total),
            "swept_sweeps": str(swept),
            "completion_fraction": repr(swept / total if total else 0.0),
            "instance_count": str(sum(int(s["instance_count"]) for s in statuses)),
            "success_count": str(sum(int(s["success_count"]) for s in statuses)),
            "last_updated": str(int(time.time()) if now is None else int(now)),
        }
        status_id = campaign + STATUS_SUFFIX
        return _upsert(
            store, status_id, NodeKind.CAMPAIGN_STATUS, props,
            GraphEdge(campaign, status_id, EdgeRelation.HAS_STATUS),
        )


def owning_campaign(store: GraphStore, group: str) -> str:
    parents = store.neighbors(group, EdgeRelation.PART_OF, Direction.OUTGOING)
    if not parents:
        raise NotFound(f"campaign of {group}")
    return parents[0]


def on_sweep_group_complete(store: GraphStore, group: str, *, now: int | None = None) -> str:
    """Distill the finished group, then refresh its campaign's status."""
    with store.write():
        _require(store, group, NodeKind.SWEEP_GROUP)
        distill_group(store, group)
        return distill_campaign(store, owning_campaign(store, group), cascade=False, now=now)


def status_report(store: GraphStore, campaign: str) -> str:
    """Human-readable rendering of an already distilled campaign."""
    status = store.get_node(campaign + STATUS_SUFFIX).properties
    lines = [
        f"campaign {campaign}",
        f"  completion      {float(status['completion_fraction']):.3f} "
        f"({status['swept_sweeps']}/{status['total_sweeps']} sweeps executed)",
        f"  instances       {status['instance_count']} ({status['success_count']} succeeded)",
        f"  last updated    {status['last_updated']}",
    ]
    for sid in filter(None, status["group_statuses"].split(",")):
        g = store.get_node(sid).properties
        lines.append(f"  group {g['group']}")
        lines.append(f"    sweeps        {g['swept_sweep_count']}/{g['sweep_count']} executed")
        if "runtime_mean" in g:
            lines.append(
                f"    runtime       min {float(g['runtime_min']):.3f}s  "
                f"mean {float(g['runtime_mean']):.3f}s  max {float(g['runtime_max']):.3f}s"
            )
        for key in sorted(k for k in g if k.startswith("cov.") and k.endswith(".min")):
            param = key[4:-4]
            lines.append(f"    {param:<13} [{g[key]}, {g[f'cov.{param}.max']}]")
    return "\n".join(lines) + "\n"
