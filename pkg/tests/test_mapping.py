import random

import pytest

from modelsink.mapping import (
    MappingConfigError,
    UnknownEvent,
    load_mapping,
    normalize,
    serialize_mapping,
    targets,
    translate,
)

from conftest import CENTER_UID, DISEASE_UID, HEART_UID, KIDNEY_UID, RURAL_UID


def test_stroke_fixture_rules(stroke_mapping):
    table = stroke_mapping
    assert table.normalize_rules[(RURAL_UID, "ev_tpa_recommended")] == "stroke.tpa_recommended"
    assert translate(table, "stroke.tpa_recommended", CENTER_UID) == [
        ("ev_begin_tpa", "GeneralAssessment")]


def test_duplicate_normalize_rule_rejected():
    config = b"""
[[normalize]]
origin = "ab0000000000000000000000000000a1"
event = "ev_x"
topic = "t.one"

[[normalize]]
origin = "ab0000000000000000000000000000a1"
event = "ev_x"
topic = "t.two"
"""
    with pytest.raises(MappingConfigError) as err:
        load_mapping(config)
    problems = err.value.problems
    assert any(p.rule == "DuplicateRule" for p in problems)
    # the second [[normalize]] header is on line 7
    assert any(p.line == 7 for p in problems)


def test_empty_config_is_valid():
    table = load_mapping(b"")
    assert table.normalize_rules == {}
    assert translate(table, "anything", RURAL_UID) == []


def test_normalize_fixture_event(stroke_mapping):
    ev = normalize(stroke_mapping, RURAL_UID, "ev_tpa_recommended", 5, 100)
    assert ev.topic == "stroke.tpa_recommended"
    assert ev.origin_sequence == 5
    assert ev.timestamp_ms == 100


def test_normalize_unknown_event(stroke_mapping):
    with pytest.raises(UnknownEvent):
        normalize(stroke_mapping, RURAL_UID, "ev_nonexistent", 1, 1)


def test_normalize_is_pure(stroke_mapping):
    a = normalize(stroke_mapping, RURAL_UID, "ev_status_update", 9, 42)
    b = normalize(stroke_mapping, RURAL_UID, "ev_status_update", 9, 42)
    assert a == b


def test_translate_no_route_yields_empty(stroke_mapping):
    assert translate(stroke_mapping, "stroke.tpa_recommended", RURAL_UID) == []


def test_targets(sepsis_mapping):
    assert targets(sepsis_mapping, "sepsis.shock_declared") == {HEART_UID, KIDNEY_UID}
    assert targets(sepsis_mapping, "sepsis.cardio_stable") == {DISEASE_UID}
    assert targets(sepsis_mapping, "no.such.topic") == frozenset()


def test_dangling_topic_rejected():
    config = b"""
[[translate]]
topic = "t.orphan"
target = "ab0000000000000000000000000000c1"
events = [{event = "ev_x", safety = ""}]
"""
    with pytest.raises(MappingConfigError) as err:
        load_mapping(config)
    assert any(p.rule == "DanglingTopic" for p in err.value.problems)


def test_unknown_keys_rejected():
    config = b"""
[[normalize]]
origin = "ab0000000000000000000000000000a1"
event = "ev_x"
topic = "t.one"
priority = 3
"""
    with pytest.raises(MappingConfigError, match="unknown key 'priority'"):
        load_mapping(config)


def random_table_config(rng: random.Random) -> tuple[bytes, list]:
    """Build a random config and an expectation list via an independent naive path."""
    uids = [bytes([i]) * 16 for i in range(1, 5)]
    lines = []
    expected = []  # (topic, target, ordered events)
    topics = []
    for t in range(rng.randrange(1, 5)):
        topic = f"topic.{t}"
        origin = rng.choice(uids)
        lines += ["[[normalize]]", f'origin = "{origin.hex()}"',
                  f'event = "ev_src_{t}"', f'topic = "{topic}"', ""]
        topics.append(topic)
    for topic in topics:
        for target in rng.sample(uids, rng.randrange(1, 3)):
            events = [(f"ev_{topic}_{i}", rng.choice(["", "SafeState"]))
                      for i in range(rng.randrange(1, 4))]
            items = ", ".join(f'{{event = "{e}", safety = "{s}"}}' for e, s in events)
            lines += ["[[translate]]", f'topic = "{topic}"',
                      f'target = "{target.hex()}"', f"events = [{items}]", ""]
            expected.append((topic, target, events))
    return "\n".join(lines).encode(), expected


def test_translate_preserves_config_order_random():
    rng = random.Random(31)
    for _ in range(50):
        config, expected = random_table_config(rng)
        table = load_mapping(config)
        for topic, target, events in expected:
            assert translate(table, topic, target) == events


def test_serialize_roundtrip_behaves_identically(stroke_mapping, sepsis_mapping):
    for table in (stroke_mapping, sepsis_mapping):
        clone = load_mapping(serialize_mapping(table))
        assert clone.normalize_rules == table.normalize_rules
        assert clone.translate_rules == table.translate_rules
        assert clone.declared_targets == table.declared_targets
