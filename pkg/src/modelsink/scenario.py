"""Declarative multi-node experiment descriptions.

Scenario file (TOML), paths resolved relative to the file:

    duration_ms = 10000
    clock = "simulated"            # or "real"
    mapping = "mapping.toml"

    [hub]
    key = "<32 hex chars>"
    batch_limit = 32
    queue_capacity = 65536
    ping_timeout_ms = 3000

    [[node]]
    name = "rural"
    models = ["rural.model.toml"]
    poll_interval_ms = 100

    [[script]]
    t_ms = 500
    node = "rural"
    model = "<32 hex chars>"
    event = "ev_patient_arrived"

    [[fault]]
    t_ms = 1500
    kind = "drop_all"              # drop_push | drop_poll | drop_all | restore
    node = "center"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import ModelDef
from .mapping import MappingConfigError, MappingTable, load_mapping_file
from .modelfile import ModelFileError, load_model

FAULT_KINDS = ("drop_push", "drop_poll", "drop_all", "restore")

_TOP_KEYS = {"duration_ms", "clock", "mapping", "hub", "node", "script", "fault"}
_HUB_KEYS = {"key", "batch_limit", "queue_capacity", "ping_timeout_ms"}
_NODE_KEYS = {"name", "models", "poll_interval_ms", "ping_period_ms",
              "comm_fail_threshold", "outbound_buffer",
              "reconnect_initial_ms", "reconnect_max_ms"}
_SCRIPT_KEYS = {"t_ms", "node", "model", "event"}
_FAULT_KEYS = {"t_ms", "kind", "node"}


class ScenarioError(Exception):
    pass


@dataclass
class NodeSpec:
    name: str
    model_paths: list[Path]
    poll_interval_ms: int = 1000
    ping_period_ms: int = 1000
    comm_fail_threshold: int = 3
    outbound_buffer: int = 1024
    reconnect_initial_ms: int = 100
    reconnect_max_ms: int = 1000
    line: int = 0


@dataclass
class ScriptEvent:
    t_ms: int
    node: str
    model_uid: bytes
    event: str
    line: int = 0


@dataclass
class FaultEvent:
    t_ms: int
    kind: str
    node: str
    line: int = 0


@dataclass
class Scenario:
    path: Path
    duration_ms: int
    clock: str
    mapping_path: Path
    hub: dict
    nodes: list[NodeSpec]
    script: list[ScriptEvent]
    faults: list[FaultEvent]

    def node(self, name: str) -> NodeSpec | None:
        for n in self.nodes:
            if n.name == name:
                return n
        return None


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def summary(self) -> str:
        lines = [f"error: {e}" for e in self.errors]
        lines += [f"warning: {w}" for w in self.warnings]
        lines.append("OK" if self.ok else f"FAILED ({len(self.errors)} errors)")
        return "\n".join(lines)


def _header_lines(text: str, name: str) -> list[int]:
    header = f"[[{name}]]"
    return [i + 1 for i, line in enumerate(text.splitlines())
            if line.strip() == header]


def load_scenario(path: str | Path) -> Scenario:
    """Parse the scenario file; schema problems raise ScenarioError with line anchors."""
    path = Path(path)
    try:
        text = path.read_text()
        doc = tomllib.loads(text)
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: parse error: {exc}") from exc

    problems: list[str] = []
    for key in doc:
        if key not in _TOP_KEYS:
            problems.append(f"unknown key {key!r}")

    duration = doc.get("duration_ms")
    if not isinstance(duration, int) or duration <= 0:
        problems.append("duration_ms must be a positive integer")
        duration = 1
    clock = doc.get("clock", "simulated")
    if clock not in ("simulated", "real"):
        problems.append("clock must be 'simulated' or 'real'")
    mapping_rel = doc.get("mapping")
    if not isinstance(mapping_rel, str):
        problems.append("mapping must name a config file")
        mapping_rel = "mapping.toml"

    hub = doc.get("hub", {})
    if not isinstance(hub, dict):
        problems.append("[hub] must be a table")
        hub = {}
    for key in hub:
        if key not in _HUB_KEYS:
            problems.append(f"[hub]: unknown key {key!r}")

    node_lines = _header_lines(text, "node")
    nodes: list[NodeSpec] = []
    for i, entry in enumerate(doc.get("node", [])):
        line = node_lines[i] if i < len(node_lines) else 0
        for key in entry:
            if key not in _NODE_KEYS:
                problems.append(f"line {line}: [[node]]: unknown key {key!r}")
        name = entry.get("name")
        models = entry.get("models")
        if not isinstance(name, str) or not name:
            problems.append(f"line {line}: [[node]] needs a name")
            continue
        if not isinstance(models, list) or not models:
            problems.append(f"line {line}: node {name!r} needs a models list")
            continue
        spec = NodeSpec(name=name,
                        model_paths=[path.parent / m for m in models],
                        line=line)
        for attr in ("poll_interval_ms", "ping_period_ms", "comm_fail_threshold",
                     "outbound_buffer", "reconnect_initial_ms", "reconnect_max_ms"):
            if attr in entry:
                value = entry[attr]
                if not isinstance(value, int) or value < 1:
                    problems.append(f"line {line}: {attr} must be a positive integer")
                else:
                    setattr(spec, attr, value)
        nodes.append(spec)

    script_lines = _header_lines(text, "script")
    script: list[ScriptEvent] = []
    for i, entry in enumerate(doc.get("script", [])):
        line = script_lines[i] if i < len(script_lines) else 0
        for key in entry:
            if key not in _SCRIPT_KEYS:
                problems.append(f"line {line}: [[script]]: unknown key {key!r}")
        try:
            uid = bytes.fromhex(entry.get("model", ""))
        except ValueError:
            uid = b""
        t_ms = entry.get("t_ms")
        node = entry.get("node")
        event = entry.get("event")
        if (not isinstance(t_ms, int) or t_ms < 0 or not isinstance(node, str)
                or not isinstance(event, str) or not event or len(uid) != 16):
            problems.append(f"line {line}: [[script]] needs t_ms, node, model (32 hex), event")
            continue
        script.append(ScriptEvent(t_ms, node, uid, event, line))

    fault_lines = _header_lines(text, "fault")
    faults: list[FaultEvent] = []
    for i, entry in enumerate(doc.get("fault", [])):
        line = fault_lines[i] if i < len(fault_lines) else 0
        for key in entry:
            if key not in _FAULT_KEYS:
                problems.append(f"line {line}: [[fault]]: unknown key {key!r}")
        t_ms = entry.get("t_ms")
        kind = entry.get("kind")
        node = entry.get("node")
        if (not isinstance(t_ms, int) or t_ms < 0 or kind not in FAULT_KINDS
                or not isinstance(node, str)):
            problems.append(
                f"line {line}: [[fault]] needs t_ms, kind in {FAULT_KINDS}, node")
            continue
        faults.append(FaultEvent(t_ms, kind, node, line))

    if problems:
        raise ScenarioError(f"{path}: " + "; ".join(problems))

    script.sort(key=lambda s: (s.t_ms, s.line))
    faults.sort(key=lambda f: (f.t_ms, f.line))
    return Scenario(path=path, duration_ms=duration, clock=clock,
                    mapping_path=path.parent / mapping_rel,
                    hub=hub, nodes=nodes, script=script, faults=faults)


@dataclass
class LoadedScenario:
    report: ValidationReport
    models: dict[bytes, ModelDef]
    node_models: dict[str, list[bytes]]
    mapping: MappingTable | None


def validate_scenario(scenario: Scenario) -> LoadedScenario:
    """Cross-check the scenario against its models and mapping config.

    Returns the report plus everything it loaded, so a runner does not parse
    the same files twice.
    """
    report = ValidationReport()
    models: dict[bytes, ModelDef] = {}
    node_models: dict[str, list[bytes]] = {}

    names = [n.name for n in scenario.nodes]
    if len(set(names)) != len(names):
        report.errors.append("node names must be unique")
    if not scenario.nodes:
        report.errors.append("scenario declares no nodes")

    for node in scenario.nodes:
        hosted = []
        for mp in node.model_paths:
            try:
                model = load_model(mp)
            except (OSError, ModelFileError) as exc:
                report.errors.append(f"line {node.line}: node {node.name!r}: {exc}")
                continue
            if model.uid in models:
                report.errors.append(
                    f"line {node.line}: model uid {model.uid.hex()} hosted twice")
                continue
            models[model.uid] = model
            hosted.append(model.uid)
        node_models[node.name] = hosted

    mapping = None
    try:
        mapping = load_mapping_file(scenario.mapping_path)
    except (OSError, MappingConfigError) as exc:
        report.errors.append(f"mapping: {exc}")

    for ev in scenario.script:
        where = f"line {ev.line}"
        if ev.t_ms > scenario.duration_ms:
            report.errors.append(f"{where}: script time {ev.t_ms} exceeds duration")
        if ev.node not in node_models:
            report.errors.append(f"{where}: unknown node {ev.node!r}")
            continue
        if ev.model_uid not in node_models[ev.node]:
            report.errors.append(
                f"{where}: model {ev.model_uid.hex()} is not hosted on {ev.node!r}")
            continue
        model = models[ev.model_uid]
        triggers = {t.trigger for t in model.transitions}
        if ev.event not in triggers:
            report.errors.append(
                f"{where}: event {ev.event!r} does not exist in model {model.display_name!r}")
            continue
        if mapping is not None:
            topic = mapping.normalize_rules.get((ev.model_uid, ev.event))
            if topic is None:
                report.warnings.append(
                    f"{where}: NoRoute: event {ev.event!r} has no normalize rule (stays local)")
            elif not mapping.declared_targets.get(topic):
                report.warnings.append(
                    f"{where}: NoRoute: topic {topic!r} has no translate targets")

    for fault in scenario.faults:
        if fault.t_ms > scenario.duration_ms:
            report.errors.append(f"line {fault.line}: fault time exceeds duration")
        if fault.node not in node_models:
            report.errors.append(f"line {fault.line}: unknown node {fault.node!r}")

    # coverage lint: every remote-deliverable event must exist in its target model
    if mapping is not None:
        for (topic, target), events in mapping.translate_rules.items():
            model = models.get(target)
            if model is None:
                report.warnings.append(
                    f"mapping: translate target {target.hex()} for {topic!r} "
                    "is not hosted by any node")
                continue
            triggers = {t.trigger for t in model.transitions}
            for event, _safety in events:
                if event not in triggers:
                    report.warnings.append(
                        f"mapping: translated event {event!r} for {topic!r} has no "
                        f"transition in {model.display_name!r}")

    return LoadedScenario(report, models, node_models, mapping)
