"""Deterministic flat statechart execution with two-class state safety.

States are either open-loop safe (safe to occupy indefinitely) or transient
safe (safe only for a bounded dwell, after which the instance is forced to a
pre-selected open-loop safe fallback). Remote events may only move an
instance into a transient-safe state when they carry a safety field naming a
valid local open-loop safe state, which is queued as the emergency fallback
before the transition happens.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class SafetyClass(enum.Enum):
    OPEN_LOOP_SAFE = "open_loop_safe"
    TRANSIENT_SAFE = "transient_safe"


@dataclass(frozen=True)
class StateDef:
    name: str
    safety_class: SafetyClass
    max_dwell_ms: int | None = None   # required iff TRANSIENT_SAFE
    fallback_target: str | None = None  # required iff TRANSIENT_SAFE; must be open-loop safe


@dataclass(frozen=True)
class TransitionDef:
    source: str
    target: str
    trigger: str


@dataclass(frozen=True)
class ModelDef:
    uid: bytes  # 16 bytes
    display_name: str
    states: tuple[StateDef, ...]
    transitions: tuple[TransitionDef, ...]
    initial: str

    def state(self, name: str) -> StateDef | None:
        for s in self.states:
            if s.name == name:
                return s
        return None

    def transition_from(self, source: str, trigger: str) -> TransitionDef | None:
        for t in self.transitions:
            if t.source == source and t.trigger == trigger:
                return t
        return None

    @property
    def uid_hex(self) -> str:
        return self.uid.hex()


@dataclass(frozen=True)
class ValidationError:
    rule: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.rule}({self.element}): {self.message}"


# -- event origins ------------------------------------------------------------

@dataclass(frozen=True)
class Local:
    pass


@dataclass(frozen=True)
class Remote:
    safety_field: str | None = None


LOCAL = Local()


# -- raise_event / tick outcomes ----------------------------------------------

@dataclass(frozen=True)
class Transitioned:
    from_state: str
    to_state: str


@dataclass(frozen=True)
class NoMatch:
    pass


@dataclass(frozen=True)
class RejectedUnsafe:
    reason: str


@dataclass(frozen=True)
class FallbackFired:
    from_state: str
    to_state: str


NO_MATCH = NoMatch()

Outcome = Transitioned | NoMatch | RejectedUnsafe


class InvalidModel(Exception):
    def __init__(self, errors: list[ValidationError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


def validate_model(model: ModelDef) -> list[ValidationError]:
    """Check every structural invariant; an empty result means the model is runnable."""
    errors: list[ValidationError] = []
    names = [s.name for s in model.states]
    by_name: dict[str, StateDef] = {}
    for s in model.states:
        if s.name in by_name:
            errors.append(ValidationError("DuplicateState", s.name, "state name declared twice"))
        else:
            by_name[s.name] = s

    if len(model.uid) != 16:
        errors.append(ValidationError("BadUid", model.display_name, "uid must be exactly 16 bytes"))

    for s in model.states:
        if s.safety_class is SafetyClass.TRANSIENT_SAFE:
            if s.max_dwell_ms is None or s.max_dwell_ms <= 0:
                errors.append(ValidationError(
                    "MissingDwell", s.name, "transient-safe state needs max_dwell_ms > 0"))
            if s.fallback_target is None:
                errors.append(ValidationError(
                    "MissingFallback", s.name, "transient-safe state needs a fallback_target"))
            else:
                target = by_name.get(s.fallback_target)
                if target is None:
                    errors.append(ValidationError(
                        "UnknownFallback", s.name,
                        f"fallback_target {s.fallback_target!r} is not a state"))
                elif target.safety_class is not SafetyClass.OPEN_LOOP_SAFE:
                    errors.append(ValidationError(
                        "FallbackNotOpenLoopSafe", s.name,
                        f"fallback_target {s.fallback_target!r} must be open-loop safe"))
        else:
            if s.max_dwell_ms is not None:
                errors.append(ValidationError(
                    "DwellOnOpenLoopSafe", s.name, "open-loop safe state must not set max_dwell_ms"))
            if s.fallback_target is not None:
                errors.append(ValidationError(
                    "FallbackOnOpenLoopSafe", s.name,
                    "open-loop safe state must not set fallback_target"))

    seen_pairs: set[tuple[str, str]] = set()
    for t in model.transitions:
        label = f"{t.source}--{t.trigger}-->{t.target}"
        if t.source not in by_name:
            errors.append(ValidationError("UnknownState", label, f"source {t.source!r} is not a state"))
        if t.target not in by_name:
            errors.append(ValidationError("UnknownState", label, f"target {t.target!r} is not a state"))
        pair = (t.source, t.trigger)
        if pair in seen_pairs:
            errors.append(ValidationError(
                "NondeterministicTransition", label,
                f"duplicate transition for ({t.source!r}, {t.trigger!r})"))
        seen_pairs.add(pair)

    if model.initial not in by_name:
        errors.append(ValidationError("UnknownState", model.initial, "initial is not a state"))
    elif by_name[model.initial].safety_class is not SafetyClass.OPEN_LOOP_SAFE:
        errors.append(ValidationError(
            "InitialNotOpenLoopSafe", model.initial, "the initial state must be open-loop safe"))

    if not names:
        errors.append(ValidationError("NoStates", model.display_name, "model declares no states"))

    return errors


class EngineInstance:
    """One running statechart. Single-threaded: the owner serializes all calls."""

    def __init__(self, model: ModelDef, now_ms: int):
        self.model = model
        self.active = model.initial
        self.entered_at_ms = now_ms
        self.pending_fallback: str | None = None
        # last applied remote sequence per origin uid, for apply-side dedup
        self.applied_seq: dict[bytes, int] = {}

    @property
    def active_state(self) -> StateDef:
        s = self.model.state(self.active)
        assert s is not None
        return s

    def dwell_remaining_ms(self, now_ms: int) -> int | None:
        s = self.active_state
        if s.safety_class is not SafetyClass.TRANSIENT_SAFE:
            return None
        return max(0, s.max_dwell_ms - (now_ms - self.entered_at_ms))

    def raise_event(self, event: str, origin: Local | Remote, now_ms: int) -> Outcome:
        """Fire the transition for (active, event) if one exists, enforcing the remote safety-field guard."""
        transition = self.model.transition_from(self.active, event)
        if transition is None:
            return NO_MATCH
        target = self.model.state(transition.target)
        assert target is not None
        if target.safety_class is SafetyClass.OPEN_LOOP_SAFE:
            return self._move_to(target.name, clear_fallback=True, now_ms=now_ms)
        # transient-safe target: an emergency option must be queued before we move
        if isinstance(origin, Remote):
            fallback = origin.safety_field
            if not fallback:
                return RejectedUnsafe("remote event carries no safety field")
            fb_state = self.model.state(fallback)
            if fb_state is None:
                return RejectedUnsafe(f"safety field names unknown state {fallback!r}")
            if fb_state.safety_class is not SafetyClass.OPEN_LOOP_SAFE:
                return RejectedUnsafe(f"safety field state {fallback!r} is not open-loop safe")
        else:
            fallback = target.fallback_target
            assert fallback is not None  # validated model
        outcome = self._move_to(target.name, clear_fallback=False, now_ms=now_ms)
        self.pending_fallback = fallback
        return outcome

    def tick(self, now_ms: int) -> FallbackFired | None:
        """Enforce the dwell bound; strict comparison so now == deadline is still safe."""
        s = self.active_state
        if s.safety_class is not SafetyClass.TRANSIENT_SAFE:
            return None
        if now_ms - self.entered_at_ms > s.max_dwell_ms:
            return self._fallback(now_ms)
        return None

    def force_fallback(self, now_ms: int) -> FallbackFired | None:
        """Jump to the queued open-loop safe state immediately; no-op if already open-loop safe."""
        if self.active_state.safety_class is not SafetyClass.TRANSIENT_SAFE:
            return None
        return self._fallback(now_ms)

    def _fallback(self, now_ms: int) -> FallbackFired:
        assert self.pending_fallback is not None
        origin = self.active
        target = self.pending_fallback
        self.active = target
        self.entered_at_ms = now_ms
        self.pending_fallback = None
        return FallbackFired(origin, target)

    def _move_to(self, name: str, clear_fallback: bool, now_ms: int) -> Transitioned:
        outcome = Transitioned(self.active, name)
        self.active = name
        self.entered_at_ms = now_ms
        if clear_fallback:
            self.pending_fallback = None
        return outcome


def start(model: ModelDef, now_ms: int) -> EngineInstance:
    errors = validate_model(model)
    if errors:
        raise InvalidModel(errors)
    return EngineInstance(model, now_ms)
