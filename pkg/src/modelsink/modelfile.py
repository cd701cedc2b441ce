"""Loading of statechart model definition files.

Format (TOML):

    [model]
    uid = "000102030405060708090a0b0c0d0e0f"   # 32 hex chars
    name = "Stroke center"
    initial = "Awaiting_Arrival"

    [[state]]
    name = "tPA_Therapy"
    class = "transient_safe"
    max_dwell_ms = 5000
    fallback = "GeneralAssessment"

    [[transition]]
    from = "GeneralAssessment"
    to = "tPA_Therapy"
    on = "ev_begin_tpa"

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import ModelDef, SafetyClass, StateDef, TransitionDef, validate_model


class ModelFileError(Exception):
    """Raised for syntax, schema, or invariant problems in a model file."""

    def __init__(self, path: str, problems: list[str]):
        self.path = path
        self.problems = problems
        super().__init__(f"{path}: " + "; ".join(problems))


_MODEL_KEYS = {"uid", "name", "initial"}
_STATE_KEYS = {"name", "class", "max_dwell_ms", "fallback"}
_TRANSITION_KEYS = {"from", "to", "on"}
_TOP_KEYS = {"model", "state", "transition"}


def parse_model(data: bytes, path: str = "<memory>") -> ModelDef:
    """Parse and fully validate one model file; raises ModelFileError on any problem."""
    problems: list[str] = []
    try:
        doc = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ModelFileError(path, [f"parse error: {exc}"]) from exc

    for key in doc:
        if key not in _TOP_KEYS:
            problems.append(f"unknown section {key!r}")

    header = doc.get("model")
    if not isinstance(header, dict):
        raise ModelFileError(path, problems + ["missing [model] section"])
    for key in header:
        if key not in _MODEL_KEYS:
            problems.append(f"[model]: unknown key {key!r}")

    uid = b""
    uid_text = header.get("uid")
    if not isinstance(uid_text, str) or len(uid_text) != 32:
        problems.append("[model]: uid must be 32 hex characters")
    else:
        try:
            uid = bytes.fromhex(uid_text)
        except ValueError:
            problems.append("[model]: uid is not valid hex")

    name = header.get("name")
    if not isinstance(name, str) or not name:
        problems.append("[model]: name must be a non-empty string")
        name = "?"
    initial = header.get("initial")
    if not isinstance(initial, str) or not initial:
        problems.append("[model]: initial must be a non-empty string")
        initial = "?"

    states: list[StateDef] = []
    for i, entry in enumerate(doc.get("state", [])):
        label = f"[[state]] #{i + 1}"
        for key in entry:
            if key not in _STATE_KEYS:
                problems.append(f"{label}: unknown key {key!r}")
        state_name = entry.get("name")
        if not isinstance(state_name, str) or not state_name:
            problems.append(f"{label}: name must be a non-empty string")
            continue
        cls_text = entry.get("class")
        if cls_text == "open_loop_safe":
            cls = SafetyClass.OPEN_LOOP_SAFE
        elif cls_text == "transient_safe":
            cls = SafetyClass.TRANSIENT_SAFE
        else:
            problems.append(f"{label}: class must be 'open_loop_safe' or 'transient_safe'")
            continue
        dwell = entry.get("max_dwell_ms")
        if dwell is not None and (not isinstance(dwell, int) or isinstance(dwell, bool)):
            problems.append(f"{label}: max_dwell_ms must be an integer")
            dwell = None
        fallback = entry.get("fallback")
        if fallback is not None and not isinstance(fallback, str):
            problems.append(f"{label}: fallback must be a string")
            fallback = None
        states.append(StateDef(state_name, cls, dwell, fallback))

    transitions: list[TransitionDef] = []
    for i, entry in enumerate(doc.get("transition", [])):
        label = f"[[transition]] #{i + 1}"
        for key in entry:
            if key not in _TRANSITION_KEYS:
                problems.append(f"{label}: unknown key {key!r}")
        source = entry.get("from")
        target = entry.get("to")
        trigger = entry.get("on")
        if not all(isinstance(v, str) and v for v in (source, target, trigger)):
            problems.append(f"{label}: from, to, and on must be non-empty strings")
            continue
        transitions.append(TransitionDef(source, target, trigger))

    if problems:
        raise ModelFileError(path, problems)

    model = ModelDef(uid, name, tuple(states), tuple(transitions), initial)
    errors = validate_model(model)
    if errors:
        raise ModelFileError(path, [str(e) for e in errors])
    return model


def load_model(path: str | Path) -> ModelDef:
    p = Path(path)
    return parse_model(p.read_bytes(), str(p))
