"""Event normalization and translation tables.

Model-local events are normalized to generic topics, and topics are
translated into ordered per-model event lists, all driven by a declarative
config file:

    [[normalize]]
    origin = "<32 hex chars>"
    event = "ev_tpa_recommended"
    topic = "stroke.tpa_recommended"

    [[translate]]
    topic = "stroke.tpa_recommended"
    target = "<32 hex chars>"
    events = [{event = "ev_begin_tpa", safety = "GeneralAssessment"}]

A table is immutable once loaded; hot reload swaps whole tables.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class GenericEvent:
    topic: str
    origin_uid: bytes
    origin_sequence: int
    timestamp_ms: int


@dataclass(frozen=True)
class MappingProblem:
    line: int  # 1-based line of the offending table header; 0 when unknown
    rule: str  # ParseError | DuplicateRule | DanglingTopic | SchemaError
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.rule}: {self.message}"


class MappingConfigError(Exception):
    def __init__(self, problems: list[MappingProblem]):
        self.problems = problems
        super().__init__("; ".join(str(p) for p in problems))


class UnknownEvent(Exception):
    """No normalize rule covers this (origin, event) pair."""


@dataclass(frozen=True)
class MappingTable:
    normalize_rules: dict[tuple[bytes, str], str]
    translate_rules: dict[tuple[str, bytes], tuple[tuple[str, str], ...]]
    declared_targets: dict[str, frozenset[bytes]]

    def topics(self) -> set[str]:
        return set(self.normalize_rules.values())


EMPTY_TABLE = MappingTable({}, {}, {})


def _table_header_lines(text: str, name: str) -> list[int]:
    header = f"[[{name}]]"
    return [i + 1 for i, line in enumerate(text.splitlines())
            if line.strip() == header]


def _parse_uid(value, where: str, line: int, problems: list[MappingProblem]) -> bytes | None:
    if not isinstance(value, str) or len(value) != 32:
        problems.append(MappingProblem(line, "SchemaError", f"{where} must be 32 hex characters"))
        return None
    try:
        return bytes.fromhex(value)
    except ValueError:
        problems.append(MappingProblem(line, "SchemaError", f"{where} is not valid hex"))
        return None


def load_mapping(config_bytes: bytes) -> MappingTable:
    """Parse and validate a mapping config; raises MappingConfigError listing every problem found."""
    problems: list[MappingProblem] = []
    try:
        text = config_bytes.decode("utf-8")
        doc = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise MappingConfigError([MappingProblem(0, "ParseError", str(exc))]) from exc

    for key in doc:
        if key not in ("normalize", "translate"):
            problems.append(MappingProblem(0, "SchemaError", f"unknown section {key!r}"))

    norm_lines = _table_header_lines(text, "normalize")
    trans_lines = _table_header_lines(text, "translate")

    normalize_rules: dict[tuple[bytes, str], str] = {}
    for i, entry in enumerate(doc.get("normalize", [])):
        line = norm_lines[i] if i < len(norm_lines) else 0
        for key in entry:
            if key not in ("origin", "event", "topic"):
                problems.append(MappingProblem(line, "SchemaError", f"unknown key {key!r}"))
        origin = _parse_uid(entry.get("origin"), "origin", line, problems)
        event = entry.get("event")
        topic = entry.get("topic")
        if not isinstance(event, str) or not event or not isinstance(topic, str) or not topic:
            problems.append(MappingProblem(line, "SchemaError", "event and topic must be non-empty strings"))
            continue
        if origin is None:
            continue
        if (origin, event) in normalize_rules:
            problems.append(MappingProblem(
                line, "DuplicateRule",
                f"({entry.get('origin')}, {event!r}) already has a normalize rule"))
            continue
        normalize_rules[(origin, event)] = topic

    translate_rules: dict[tuple[str, bytes], tuple[tuple[str, str], ...]] = {}
    declared: dict[str, set[bytes]] = {}
    for i, entry in enumerate(doc.get("translate", [])):
        line = trans_lines[i] if i < len(trans_lines) else 0
        for key in entry:
            if key not in ("topic", "target", "events"):
                problems.append(MappingProblem(line, "SchemaError", f"unknown key {key!r}"))
        topic = entry.get("topic")
        target = _parse_uid(entry.get("target"), "target", line, problems)
        events = entry.get("events")
        if not isinstance(topic, str) or not topic:
            problems.append(MappingProblem(line, "SchemaError", "topic must be a non-empty string"))
            continue
        if not isinstance(events, list) or not events:
            problems.append(MappingProblem(line, "SchemaError", "events must be a non-empty list"))
            continue
        pairs: list[tuple[str, str]] = []
        for item in events:
            if not isinstance(item, dict) or not isinstance(item.get("event"), str) or not item["event"]:
                problems.append(MappingProblem(line, "SchemaError", "each event needs a non-empty 'event'"))
                continue
            for key in item:
                if key not in ("event", "safety"):
                    problems.append(MappingProblem(line, "SchemaError", f"unknown event key {key!r}"))
            safety = item.get("safety", "")
            if not isinstance(safety, str):
                problems.append(MappingProblem(line, "SchemaError", "'safety' must be a string"))
                continue
            pairs.append((item["event"], safety))
        if target is None or not pairs:
            continue
        if (topic, target) in translate_rules:
            problems.append(MappingProblem(
                line, "DuplicateRule",
                f"({topic!r}, {entry.get('target')}) already has a translate rule"))
            continue
        translate_rules[(topic, target)] = tuple(pairs)
        declared.setdefault(topic, set()).add(target)

    produced = set(normalize_rules.values())
    for (topic, _target), _events in translate_rules.items():
        if topic not in produced:
            problems.append(MappingProblem(
                0, "DanglingTopic", f"topic {topic!r} is never produced by a normalize rule"))
            produced.add(topic)  # report once per topic

    if problems:
        raise MappingConfigError(problems)

    return MappingTable(normalize_rules,
                        translate_rules,
                        {t: frozenset(s) for t, s in declared.items()})


def load_mapping_file(path: str | Path) -> MappingTable:
    return load_mapping(Path(path).read_bytes())


def normalize(table: MappingTable, origin_uid: bytes, local_event: str,
              seq: int, ts: int) -> GenericEvent:
    topic = table.normalize_rules.get((origin_uid, local_event))
    if topic is None:
        raise UnknownEvent(f"no rule for ({origin_uid.hex()}, {local_event!r})")
    return GenericEvent(topic, origin_uid, seq, ts)


def translate(table: MappingTable, topic: str, target_uid: bytes) -> list[tuple[str, str]]:
    """Ordered (event, safety) list for one target; empty means no route, which is legitimate."""
    return list(table.translate_rules.get((topic, target_uid), ()))


def targets(table: MappingTable, topic: str) -> frozenset[bytes]:
    return table.declared_targets.get(topic, frozenset())


def serialize_mapping(table: MappingTable) -> bytes:
    """Write a table back to config text; load_mapping(serialize_mapping(t)) behaves identically to t."""
    lines: list[str] = []
    for (origin, event), topic in table.normalize_rules.items():
        lines += ["[[normalize]]",
                  f'origin = "{origin.hex()}"',
                  f'event = "{event}"',
                  f'topic = "{topic}"',
                  ""]
    for (topic, target), events in table.translate_rules.items():
        items = ", ".join(f'{{event = "{e}", safety = "{s}"}}' for e, s in events)
        lines += ["[[translate]]",
                  f'topic = "{topic}"',
                  f'target = "{target.hex()}"',
                  f"events = [{items}]",
                  ""]
    return "\n".join(lines).encode("utf-8")
