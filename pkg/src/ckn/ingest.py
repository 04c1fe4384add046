"""Turn campaign specs (prospective provenance) and run logs (retrospective
provenance) into graph structure.

Campaign spec (``*.spec.json``)::

    {"campaign": "gs", "owner": "alice",
     "sweep_groups": [{"name": "fk", "researcher": "bob",
                       "parameters": {"F": [0.01, 0.02], "k": [0.05]}}]}

Run log (``*.log``), one ``key=value`` per line::

    instance_id=gs-fk-run-0
    sweep_id=gs/fk/F=0.01;k=0.05
    start=1700000000
    end=1700000042
    exit_code=0
    param.F=0.01
    metric.runtime=42.0
    input=settings.txt
    output=hist.txt
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from ckn import provenance
from ckn.errors import (
    CKNError,
    DuplicateCampaign,
    DuplicateId,
    EmptyParameterList,
    InvalidSpec,
    IoError,
    MalformedLog,
    ParamMismatch,
    UnknownSweep,
)
from ckn.graph import EdgeRelation, GraphEdge, GraphNode, GraphStore, NodeKind
from ckn.provenance import ProvenanceRecord
from ckn.signature import sign_instance

logger = logging.getLogger(__name__)

SPEC_SUFFIX = ".spec.json"
LOG_SUFFIX = ".log"
MANDATORY_LOG_KEYS = ("instance_id", "sweep_id", "start", "end", "exit_code")
# instance properties a log's free-form keys may not overwrite
_RESERVED_INSTANCE_KEYS = frozenset(
    {"sweep", "group", "campaign", "runtime", "activity", "log_sha256", "input", "output"}
)


def format_value(value: object) -> str:
    """Canonical string form for a spec parameter value."""
    if isinstance(value, bool) or value is None or isinstance(value, (list, dict)):
        raise InvalidSpec(f"unsupported parameter value {value!r}")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidSpec(f"non-finite parameter value {value!r}")
        return repr(value)
    return str(value).strip()


def group_id(campaign: str, group: str) -> str:
    return f"{campaign}/{group}"


def sweep_id(campaign: str, group: str, params: dict[str, str]) -> str:
    return f"{group_id(campaign, group)}/" + ";".join(f"{k}={v}" for k, v in params.items())


def agent_id(name: str) -> str:
    return f"agent:{name}"


def activity_id(instance: str) -> str:
    return f"run:{instance}"


def numeric_equal(a: str, b: str) -> bool:
    if a == b:
        return True
    try:
        return float(a) == float(b)
    except ValueError:
        return False


@dataclass
class SweepGroupSpec:
    name: str
    researcher: str
    parameters: dict[str, list[str]]

    def sweeps(self) -> Iterator[dict[str, str]]:
        names = list(self.parameters)
        for combo in itertools.product(*(self.parameters[n] for n in names)):
            yield dict(zip(names, combo))

    @property
    def sweep_count(self) -> int:
        return math.prod(len(v) for v in self.parameters.values())


@dataclass
class CampaignSpec:
    name: str
    owner: str
    sweep_groups: list[SweepGroupSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignSpec":
        if not isinstance(data, dict):
            raise InvalidSpec("campaign spec must be a JSON object")
        try:
            groups = [
                SweepGroupSpec(
                    name=str(g["name"]),
                    researcher=str(g.get("researcher") or data.get("owner") or ""),
                    parameters={
                        str(p): [format_value(v) for v in (vals if isinstance(vals, list) else [vals])]
                        for p, vals in g.get("parameters", {}).items()
                    },
                )
                for g in data.get("sweep_groups", [])
            ]
            spec = cls(name=str(data["campaign"]), owner=str(data.get("owner", "")), sweep_groups=groups)
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidSpec(f"malformed campaign spec: {exc!r}") from None
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, text: str) -> "CampaignSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"campaign spec is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CampaignSpec":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "campaign": self.name,
            "owner": self.owner,
            "sweep_groups": [
                {"name": g.name, "researcher": g.researcher, "parameters": g.parameters}
                for g in self.sweep_groups
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def validate(self) -> None:
        _check_name("campaign", self.name)
        seen = set()
        for g in self.sweep_groups:
            _check_name("sweep group", g.name)
            if g.name in seen:
                raise InvalidSpec(f"duplicate sweep group {g.name!r} in {self.name}")
            seen.add(g.name)
            if not g.parameters:
                raise EmptyParameterList(f"sweep group {g.name!r} has no parameters")
            for param, values in g.parameters.items():
                if not param or any(c in param for c in "=;/\t\n"):
                    raise InvalidSpec(f"bad parameter name {param!r}")
                if not values:
                    raise EmptyParameterList(f"{g.name}: parameter {param!r} has no values")
                if len(set(values)) != len(values):
                    raise InvalidSpec(f"{g.name}: duplicate values for {param!r}")
                for v in values:
                    if not v or any(c in v for c in ";\t\n"):
                        raise InvalidSpec(f"{g.name}: bad value {v!r} for {param!r}")

    def sweep_ids(self) -> list[str]:
        return [sweep_id(self.name, g.name, p) for g in self.sweep_groups for p in g.sweeps()]


def _check_name(what: str, name: str) -> None:
    if not name or any(c in name for c in "/\t\n\r"):
        raise InvalidSpec(f"invalid {what} name {name!r}")


@dataclass
class RunLog:
    instance_id: str
    sweep_id: str
    start: float
    end: float
    exit_code: int
    params: dict[str, str] = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    extra: dict[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "RunLog":
        fields: dict[str, str] = {}
        params: dict[str, str] = {}
        metrics: dict[str, float] = {}
        extra: dict[str, str] = {}
        inputs: list[str] = []
        outputs: list[str] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise MalformedLog(f"line {lineno}: expected key=value, got {raw!r}")
            if key == "input":
                inputs.append(value)
            elif key == "output":
                outputs.append(value)
            elif key.startswith("param."):
                _put_once(params, key[6:], value, lineno)
            elif key.startswith("metric."):
                try:
                    number = float(value)
                except ValueError:
                    raise MalformedLog(f"line {lineno}: metric {key} is not a number") from None
                if not math.isfinite(number):
                    raise MalformedLog(f"line {lineno}: metric {key} is not finite")
                _put_once(metrics, key[7:], number, lineno)
            elif key in MANDATORY_LOG_KEYS:
                _put_once(fields, key, value, lineno)
            else:
                _put_once(extra, key, value, lineno)
        missing = [k for k in MANDATORY_LOG_KEYS if not fields.get(k)]
        if missing:
            raise MalformedLog(f"missing mandatory field(s): {', '.join(missing)}")
        try:
            start, end = float(fields["start"]), float(fields["end"])
            exit_code = int(fields["exit_code"])
        except ValueError as exc:
            raise MalformedLog(f"bad numeric field: {exc}") from None
        if end < start:
            raise MalformedLog("end precedes start")
        return cls(fields["instance_id"], fields["sweep_id"], start, end, exit_code,
                   params, inputs, outputs, metrics, extra)

    def format(self) -> str:
        lines = [
            f"instance_id={self.instance_id}",
            f"sweep_id={self.sweep_id}",
            f"start={_num(self.start)}",
            f"end={_num(self.end)}",
            f"exit_code={self.exit_code}",
        ]
        lines += [f"param.{k}={v}" for k, v in self.params.items()]
        lines += [f"metric.{k}={_num(v)}" for k, v in self.metrics.items()]
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        lines += [f"input={f}" for f in self.inputs]
        lines += [f"output={f}" for f in self.outputs]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.format().encode("utf-8")).hexdigest()

    @property
    def runtime(self) -> float:
        return self.metrics.get("runtime", self.end - self.start)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _put_once(target: dict, key: str, value, lineno: int) -> None:
    if key in target:
        raise MalformedLog(f"line {lineno}: duplicate key {key!r}")
    target[key] = value


# -- graph construction ----------------------------------------------------

def _ensure_agent(store: GraphStore, name: str, role: str) -> str | None:
    if not name:
        return None
    node_id = agent_id(name)
    if not store.has_node(node_id):
        store.add_node(GraphNode(node_id, NodeKind.AGENT, {"name": name, "role": role}))
    return node_id


def ingest_spec(store: GraphStore, spec: CampaignSpec) -> str:
    """Create the campaign subtree: groups, one Sweep per cross-product element, agents."""
    spec.validate()
    with store.write():
        if store.has_node(spec.name):
            raise DuplicateCampaign(spec.name)
        planned = [group_id(spec.name, g.name) for g in spec.sweep_groups] + spec.sweep_ids()
        taken = [i for i in planned if store.has_node(i)]
        if taken:
            raise DuplicateId(taken[0])
        for g in spec.sweep_groups:
            for who in (spec.owner, g.researcher):
                if who and store.has_node(agent_id(who)) and store.kind_of(agent_id(who)) is not NodeKind.AGENT:
                    raise DuplicateId(agent_id(who))

        owner = _ensure_agent(store, spec.owner, "owner")
        props = {"name": spec.name, "spec_sha256": hashlib.sha256(spec.to_json().encode()).hexdigest()}
        if owner:
            props["owner"] = owner
        store.add_node(GraphNode(spec.name, NodeKind.CAMPAIGN, props))
        for g in spec.sweep_groups:
            gid = group_id(spec.name, g.name)
            researcher = _ensure_agent(store, g.researcher, "researcher")
            gprops = {
                "name": g.name,
                "campaign": spec.name,
                "parameters": ",".join(g.parameters),
                "sweep_count": str(g.sweep_count),
            }
            if researcher:
                gprops["researcher"] = researcher
            store.add_node(GraphNode(gid, NodeKind.SWEEP_GROUP, gprops))
            store.add_edge(GraphEdge(gid, spec.name, EdgeRelation.PART_OF))
            for params in g.sweeps():
                sid = sweep_id(spec.name, g.name, params)
                label = ";".join(f"{k}={v}" for k, v in params.items())
                sprops = {"name": label, "group": gid, "campaign": spec.name}
                sprops.update({f"param.{k}": v for k, v in params.items()})
                store.add_node(GraphNode(sid, NodeKind.SWEEP, sprops))
                store.add_edge(GraphEdge(sid, gid, EdgeRelation.PART_OF))
    logger.info("ingested campaign %s (%d sweeps)", spec.name, len(spec.sweep_ids()))
    return spec.name


def ingest_run(store: GraphStore, log: RunLog) -> str:
    """Attach one run to its sweep as an Instance plus its provenance record.

    Re-ingesting an identical log is a no-op; a different log reusing an
    instance id raises DuplicateId.
    """
    digest = log.content_hash()
    with store.write():
        if not store.has_node(log.sweep_id) or store.kind_of(log.sweep_id) is not NodeKind.SWEEP:
            raise UnknownSweep(log.sweep_id)
        if store.has_node(log.instance_id):
            existing = store.get_node(log.instance_id)
            if existing.kind is NodeKind.INSTANCE and existing.properties.get("log_sha256") == digest:
                return log.instance_id
            raise DuplicateId(log.instance_id)
        sweep = store.get_node(log.sweep_id)
        fixed = {k[6:]: v for k, v in sweep.properties.items() if k.startswith("param.")}
        params = dict(log.params)
        for name, value in fixed.items():
            given = params.get(name)
            if given is not None and not numeric_equal(given, value):
                raise ParamMismatch(f"{log.instance_id}: {name}={given} but sweep fixes {name}={value}")
            params[name] = value
        clash = _RESERVED_INSTANCE_KEYS.intersection(log.extra) | set(MANDATORY_LOG_KEYS).intersection(log.extra)
        if clash:
            raise MalformedLog(f"{log.instance_id}: reserved key(s) {sorted(clash)}")

        group = store.get_node(sweep.properties["group"])
        campaign = sweep.properties["campaign"]
        act = activity_id(log.instance_id)
        rec = ProvenanceRecord(
            activity_id=act,
            inputs=list(dict.fromkeys(log.inputs)),
            outputs=list(dict.fromkeys(log.outputs)),
            agent_id=group.properties.get("researcher"),
            attributes={
                **params,
                "name": log.extra.get("name", campaign),
                "instance": log.instance_id,
                "sweep": log.sweep_id,
                "exit_code": str(log.exit_code),
            },
            timestamp=int(log.start),
        )
        provenance.validate_record(store, rec)

        props = {
            **log.extra,
            "name": log.instance_id,
            "sweep": log.sweep_id,
            "group": group.id,
            "campaign": campaign,
            "start": _num(log.start),
            "end": _num(log.end),
            "exit_code": str(log.exit_code),
            "runtime": repr(float(log.runtime)),
            "activity": act,
            "log_sha256": digest,
        }
        props.update({f"param.{k}": v for k, v in params.items()})
        props.update({f"metric.{k}": repr(v) for k, v in log.metrics.items()})
        store.add_node(GraphNode(log.instance_id, NodeKind.INSTANCE, props))
        store.add_edge(GraphEdge(log.instance_id, log.sweep_id, EdgeRelation.INSTANTIATES))
        provenance.record(store, rec)
        sign_instance(store, log.instance_id)
    return log.instance_id


# -- directory ingestion ---------------------------------------------------

@dataclass
class IngestReport:
    specs: int = 0
    runs: int = 0
    skipped: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return len(self.errors)

    @property
    def new_files(self) -> int:
        return self.specs + self.runs

    def merge(self, other: "IngestReport") -> None:
        self.specs += other.specs
        self.runs += other.runs
        self.skipped += other.skipped
        self.errors.extend(other.errors)

    def to_dict(self) -> dict:
        return {
            "specs": self.specs,
            "runs": self.runs,
            "skipped": self.skipped,
            "errors": self.error_count,
            "error_details": [{"file": f, "error": e} for f, e in self.errors],
        }


class IngestState:
    """Processed-file ledger (absolute path -> content sha256) kept beside the store."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self.files: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            try:
                self.files = dict(json.loads(self.path.read_text(encoding="utf-8")).get("files", {}))
            except (OSError, ValueError) as exc:
                raise IoError(f"unreadable ingest state {self.path}: {exc}") from exc

    @staticmethod
    def for_store(store_path: str | os.PathLike) -> "IngestState":
        return IngestState(f"{os.fspath(store_path)}.ingest-state.json")

    def seen(self, key: str, digest: str) -> bool:
        return self.files.get(key) == digest

    def mark(self, key: str, digest: str) -> None:
        self.files[key] = digest

    def save(self) -> None:
        if self.path is None:
            return
        tmp = self.path.with_name(self.path.name + ".tmp")
        try:
            tmp.write_text(json.dumps({"version": 1, "files": dict(sorted(self.files.items()))}, indent=1))
            os.replace(tmp, self.path)
        except OSError as exc:
            raise IoError(f"cannot write ingest state {self.path}: {exc}") from exc


def _candidates(root: Path) -> tuple[list[Path], list[Path]]:
    specs, logs = [], []
    for path in sorted(root.rglob("*")):
        if path.name.startswith(".") or not path.is_file():
            continue
        if path.name.endswith(SPEC_SUFFIX):
            specs.append(path)
        elif path.name.endswith(LOG_SUFFIX):
            logs.append(path)
    return specs, logs


def scan_once(store: GraphStore, root: str | os.PathLike, state: IngestState | None = None) -> IngestReport:
    """One pass over ``root``: every new spec, then every new run log.

    Per-file failures are collected in the report and never abort the pass.
    Files are only read, never written.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"not a readable directory: {root}")
    report = IngestReport()
    specs, logs = _candidates(root)
    for path, is_spec in [(p, True) for p in specs] + [(p, False) for p in logs]:
        try:
            raw = path.read_bytes()
        except OSError as exc:
            report.errors.append((str(path), f"IoError: {exc}"))
            continue
        key, digest = str(path.resolve()), hashlib.sha256(raw).hexdigest()
        if state is not None and state.seen(key, digest):
            report.skipped += 1
            continue
        try:
            text = raw.decode("utf-8")
            if is_spec:
                ingest_spec(store, CampaignSpec.from_json(text))
                report.specs += 1
            else:
                ingest_run(store, RunLog.parse(text))
                report.runs += 1
        except (CKNError, UnicodeDecodeError) as exc:
            report.errors.append((str(path), f"{type(exc).__name__}: {exc}"))
            logger.warning("failed to ingest %s: %s", path, exc)
        if state is not None:
            state.mark(key, digest)
    if state is not None:
        state.save()
    return report


def ingest_directory(
    store: GraphStore,
    root: str | os.PathLike,
    mode: str = "post",
    *,
    interval_ms: int = 1000,
    state: IngestState | None = None,
    stop_event: threading.Event | None = None,
    max_passes: int | None = None,
    on_pass: Callable[[IngestReport], None] | None = None,
) -> IngestReport:
    """Ingest everything under ``root``.

    ``mode="post"`` makes a single pass. ``mode="poll"`` rescans every
    ``interval_ms`` until ``stop_event`` is set (or ``max_passes`` passes
    ran), processing each (file, content) pair exactly once via ``state``.
    """
    if mode in ("post", "post_process"):
        report = scan_once(store, root, state)
        if on_pass is not None:
            on_pass(report)
        return report
    if mode != "poll":
        raise ValueError(f"unknown ingest mode {mode!r}")
    if state is None:
        state = IngestState()
    stop_event = stop_event or threading.Event()
    total = IngestReport()
    passes = 0
    while not stop_event.is_set():
        report = scan_once(store, root, state)
        total.merge(report)
        passes += 1
        if on_pass is not None:
            on_pass(report)
        if max_passes is not None and passes >= max_passes:
            break
        stop_event.wait(interval_ms / 1000.0)
    return total
